use dla_core::linear_lab::{
    gen_synthetic, linear_objective, relative_residual, solve_linear_uda, LinearProblem, ObjectiveForm,
};
use dla_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_w(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn max_residual(p: &LinearProblem, k: usize, a: ObjectiveForm, b: ObjectiveForm, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| {
            let w = random_w(p.dim(), &mut rng);
            relative_residual(
                linear_objective(p, &w, k, a).unwrap(),
                linear_objective(p, &w, k, b).unwrap(),
            )
        })
        .fold(0.0, f64::max)
}

#[test]
fn exact_alignment_identities() {
    for (n, d, k, seed) in [(30, 6, 2, 1), (50, 10, 5, 2), (12, 12, 4, 3), (20, 5, 5, 4)] {
        let p = gen_synthetic(n, d, k, k, 0.0, seed).unwrap();
        for (a, b) in [
            (ObjectiveForm::Full, ObjectiveForm::Decomposed),
            (ObjectiveForm::Uda, ObjectiveForm::Combined),
            (ObjectiveForm::MatrixTop, ObjectiveForm::SumTop),
            (ObjectiveForm::MatrixBottom, ObjectiveForm::SumBottom),
        ] {
            let worst = max_residual(&p, k, a, b, seed);
            assert!(worst <= 1e-8, "{n}x{d} k={k}: {a} vs {b} residual {worst:.3e}");
        }
    }
}

#[test]
fn zero_labels_give_zero_solution() {
    let base = gen_synthetic(20, 5, 2, 2, 0.0, 11).unwrap();
    let p = LinearProblem::from_parts(base.phi.clone(), vec![0.0; 20], base.phi_tilde.clone(), 2, 2, 0.0).unwrap();
    let sol = solve_linear_uda(&p, 2, 0.01, 1000).unwrap();
    assert!(sol.converged);
    assert!(sol.w.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
}

/// Central differences of the combined form, independent of its analytic
/// gradient.
fn numeric_gradient(p: &LinearProblem, w: &[f64], k: usize) -> Vec<f64> {
    let h = 1e-6;
    (0..w.len())
        .map(|i| {
            let mut a = w.to_vec();
            a[i] += h;
            let mut b = w.to_vec();
            b[i] -= h;
            (linear_objective(p, &a, k, ObjectiveForm::Combined).unwrap()
                - linear_objective(p, &b, k, ObjectiveForm::Combined).unwrap())
                / (2.0 * h)
        })
        .collect()
}

#[test]
fn converged_solution_is_stationary() {
    for (seed, noise) in [(5, 0.0), (6, 0.2), (7, 1.0)] {
        let p = gen_synthetic(30, 6, 3, 3, noise, seed).unwrap();
        let sol = solve_linear_uda(&p, 3, 0.01, 500_000).unwrap();
        assert!(sol.converged, "seed {seed}: {sol:?}");
        let g = numeric_gradient(&p, &sol.w, 3);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Finite differences add ~1e-9 of noise on top of the 1e-6 target.
        assert!(norm <= 2e-6, "seed {seed}: numeric gradient norm {norm:.3e}");
    }
}

/// Compass search with step halving from one start point.
fn compass_search(p: &LinearProblem, k: usize, start: Vec<f64>) -> f64 {
    let f = |w: &[f64]| linear_objective(p, w, k, ObjectiveForm::Combined).unwrap();
    let mut w = start;
    let mut best = f(&w);
    let mut step = 1.0;
    while step > 1e-10 {
        let mut improved = false;
        for i in 0..w.len() {
            for dir in [1.0, -1.0] {
                let mut cand = w.clone();
                cand[i] += dir * step;
                let v = f(&cand);
                if v < best {
                    best = v;
                    w = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

#[test]
fn solver_matches_restart_search_in_four_dimensions() {
    let p = gen_synthetic(16, 4, 2, 2, 0.3, 21).unwrap();
    let sol = solve_linear_uda(&p, 2, 0.01, 500_000).unwrap();
    assert!(sol.converged);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let best = (0..20)
        .map(|_| compass_search(&p, 2, random_w(4, &mut rng)))
        .fold(f64::INFINITY, f64::min);
    assert!(
        (sol.objective - best).abs() <= 1e-4,
        "solver {} vs search {}",
        sol.objective,
        best
    );
}

#[test]
fn alignment_tail_grows_with_noise() {
    let levels = [0.0, 0.01, 0.1, 0.5, 1.0];
    let means: Vec<f64> = levels
        .iter()
        .map(|&noise| {
            (0..50)
                .map(|seed| {
                    let p = gen_synthetic(30, 8, 3, 3, noise, seed).unwrap();
                    let tail = p.alignment_tail();
                    if noise == 0.0 {
                        assert!(tail.iter().all(|v| v.abs() <= 1e-10), "seed {seed}");
                    }
                    tail.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / 50.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn mismatched_shapes_rejected() {
    let phi = Tensor::<f64>::zeros([6, 3]);
    assert!(LinearProblem::from_parts(phi.clone(), vec![0.0; 5], phi.clone(), 1, 1, 0.0).is_err());
    assert!(LinearProblem::from_parts(phi.clone(), vec![0.0; 6], Tensor::zeros([6, 4]), 1, 1, 0.0).is_err());
    let p = gen_synthetic(10, 3, 1, 1, 0.0, 0).unwrap();
    assert!(linear_objective(&p, &[0.0; 2], 1, ObjectiveForm::Full).is_err());
    assert!(linear_objective(&p, &[0.0; 3], 4, ObjectiveForm::Full).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn noisy_discrepancy_is_bounded_by_dropped_mass(
        seed in 0u64..10_000,
        noise in 0.01f64..2.0,
        k in 1usize..6,
    ) {
        let p = gen_synthetic(24, 6, 3, 3, noise, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_w(6, &mut rng);
        let full = linear_objective(&p, &w, k, ObjectiveForm::Full).unwrap();
        let dec = linear_objective(&p, &w, k, ObjectiveForm::Decomposed).unwrap();
        let reg = dec - linear_objective(&p, &w, k, ObjectiveForm::SumTop).unwrap();
        let dropped = p.dropped_mass(k);
        let bound = dropped + 2.0 * (dropped * reg.max(0.0)).sqrt();
        prop_assert!((full - dec).abs() <= bound + 1e-9 * full.abs().max(1.0));
    }
}
