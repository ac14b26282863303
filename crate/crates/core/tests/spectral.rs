use dla_core::gradcheck::{check_gradients, relative_error};
use dla_core::spectral::{
    filter_matrix, gate_weights_var, spectral_filter, thin_svd, AlignmentGate, GradientMode, Side,
};
use dla_core::tensor::{matmul_t, Graph, ParameterSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn rel_frob(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.zip_map(b, |x, y| x - y).unwrap().norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Random orthonormal columns via SVD of a Gaussian-ish matrix.
fn orthonormal(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    thin_svd(&random(&[n, r], rng)).unwrap().u
}

/// `n × d` matrix with prescribed singular values.
fn with_spectrum(n: usize, d: usize, sigma: &[f64], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let r = n.min(d);
    assert_eq!(sigma.len(), r);
    let u = orthonormal(n, r, rng);
    let v = orthonormal(d, r, rng);
    matmul_t(&u.scale_columns(sigma).unwrap(), false, &v, true).unwrap()
}

fn max_orthonormality_error(q: &Tensor<f64>) -> f64 {
    let g = matmul_t(q, true, q, false).unwrap();
    let r = g.shape()[0];
    (0..r * r)
        .map(|idx| {
            let t = if idx / r == idx % r { 1.0 } else { 0.0 };
            (g.data()[idx] - t).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn random_128_square_meets_svd_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(128);
    let a = random(&[128, 128], &mut rng);
    let f = thin_svd(&a).unwrap();
    assert!(max_orthonormality_error(&f.u) <= 1e-10);
    assert!(max_orthonormality_error(&f.v) <= 1e-10);
    assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]) && *f.sigma.last().unwrap() >= 0.0);
    assert!(rel_frob(&f.reconstruct().unwrap(), &a) <= 1e-10);
}

#[test]
fn complementary_filters_sum_to_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for trial in 0..20 {
        let n = rng.random_range(2..12);
        let d = rng.random_range(2..12);
        let phi = random(&[n, d], &mut rng);
        let gate = AlignmentGate::new(rng.random_range(-3.0..3.0), rng.random_range(0.5..8.0)).unwrap();
        let w: Vec<f64> = gate.weights(n.min(d));
        let top = filter_matrix(&phi, &w, Side::Top).unwrap();
        let bottom = filter_matrix(&phi, &w, Side::Bottom).unwrap();
        let sum = top.zip_map(&bottom, |a, b| a + b).unwrap();
        assert!(rel_frob(&sum, &phi) <= 1e-6, "trial {trial}");
    }
}

#[test]
fn all_ones_gate_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phi = random(&[9, 6], &mut rng);
    let top = filter_matrix(&phi, &[1.0; 6], Side::Top).unwrap();
    assert!(rel_frob(&top, &phi) <= 1e-6);
    let bottom = filter_matrix(&phi, &[1.0; 6], Side::Bottom).unwrap();
    assert!(bottom.norm() <= 1e-12);
}

#[test]
fn hard_gate_matches_rank_truncation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (n, d) in [(10, 10), (16, 7), (5, 12)] {
        let r = n.min(d);
        let phi = random(&[n, d], &mut rng);
        let svd = thin_svd(&phi).unwrap();
        for keep in 1..r {
            let gate = AlignmentGate::centered_at(keep as f64 + 0.5, r, 1e4).unwrap();
            let top = filter_matrix(&phi, &gate.weights::<f64>(r), Side::Top).unwrap();
            // Oracle: Σ_{i<keep} σ_i u_i v_iᵀ summed element by element.
            let truncated = Tensor::from_fn([n, d], |idx| {
                let (i, j) = (idx / d, idx % d);
                (0..keep)
                    .map(|t| svd.sigma[t] * svd.u.data()[i * r + t] * svd.v.data()[j * r + t])
                    .sum()
            });
            assert!(rel_frob(&top, &truncated) <= 1e-4, "{n}x{d} keep {keep}");
        }
    }
}

#[test]
fn gradient_modes_share_forward_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for side in [Side::Top, Side::Bottom] {
        let phi = random(&[12, 8], &mut rng);
        let mut ps = ParameterSet::new();
        ps.insert("phi", phi).unwrap();
        ps.insert("khat", Tensor::scalar(0.3)).unwrap();
        let mut outs = Vec::new();
        for mode in [GradientMode::Projected, GradientMode::Full] {
            let mut g = Graph::new();
            let p = g.param(&ps, "phi").unwrap();
            let k = g.param(&ps, "khat").unwrap();
            let w = gate_weights_var(&mut g, k, 5.0, 8).unwrap();
            let y = spectral_filter(&mut g, p, w, side, mode).unwrap();
            outs.push(g.value(y).clone());
        }
        assert!(rel_frob(&outs[0], &outs[1]) <= 1e-6);
    }
}

fn weighted_filter_loss(
    g: &mut Graph<f64>,
    p: &ParameterSet<f64>,
    side: Side,
    mode: GradientMode,
    beta: f64,
    c: &Tensor<f64>,
) -> dla_core::Result<dla_core::tensor::Var> {
    let phi = g.param(p, "phi")?;
    let k = g.param(p, "khat")?;
    let (n, d) = g.value(phi).dims2()?;
    let w = gate_weights_var(g, k, beta, n.min(d))?;
    let y = spectral_filter(g, phi, w, side, mode)?;
    let cv = g.constant(c.clone());
    let prod = g.mul(y, cv)?;
    Ok(g.sum(prod))
}

#[test]
fn projected_gradient_matches_frozen_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, d) in [(8, 8), (10, 6), (5, 9)] {
        for side in [Side::Top, Side::Bottom] {
            let r = n.min(d);
            let phi = random(&[n, d], &mut rng);
            let c = random(&[n, d], &mut rng);
            let khat = rng.random_range(-1.0..1.0);
            let beta = 3.0;
            let mut ps = ParameterSet::new();
            ps.insert("phi", phi.clone()).unwrap();
            ps.insert("khat", Tensor::scalar(khat)).unwrap();
            let mut g = Graph::new();
            let loss = weighted_filter_loss(&mut g, &ps, side, GradientMode::Projected, beta, &c).unwrap();
            g.backward(loss, &mut ps).unwrap();
            let analytic = ps.get("phi").unwrap().grad.clone().unwrap();

            // Oracle: f(X) = sum(C ∘ X P) with P = V diag(e) Vᵀ frozen at phi.
            let svd = thin_svd(&phi).unwrap();
            let w: Vec<f64> = AlignmentGate::new(khat, beta).unwrap().weights(r);
            let e: Vec<f64> = match side {
                Side::Top => w,
                Side::Bottom => w.iter().map(|x| 1.0 - x).collect(),
            };
            let proj = matmul_t(&svd.v.scale_columns(&e).unwrap(), false, &svd.v, true).unwrap();
            let f = |x: &Tensor<f64>| -> f64 {
                let y = x.matmul(&proj).unwrap();
                y.zip_map(&c, |a, b| a * b).unwrap().sum()
            };
            let h = 1e-6;
            let mut worst = 0.0f64;
            for idx in 0..n * d {
                let mut xp = phi.clone();
                xp.data_mut()[idx] += h;
                let mut xm = phi.clone();
                xm.data_mut()[idx] -= h;
                let numeric = (f(&xp) - f(&xm)) / (2.0 * h);
                worst = worst.max(relative_error(analytic.data()[idx], numeric));
            }
            assert!(worst < 1e-3, "{n}x{d} {side:?}: {worst:.3e}");

            // khat does not move the factors, so plain differences apply.
            let report = check_gradients(&ps, &["khat"], 1e-6, |g, p| {
                weighted_filter_loss(g, p, side, GradientMode::Projected, beta, &c)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-3, "{report:?}");
        }
    }
}

#[test]
fn full_gradient_matches_finite_differences_on_separated_spectra() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (n, d) in [(6, 6), (9, 5), (4, 7)] {
        let r = n.min(d);
        // Gaps of 0.3 between consecutive singular values.
        let sigma: Vec<f64> = (0..r).map(|i| 0.5 + 0.3 * (r - i) as f64).collect();
        for side in [Side::Top, Side::Bottom] {
            let phi = with_spectrum(n, d, &sigma, &mut rng);
            let c = random(&[n, d], &mut rng);
            let mut ps = ParameterSet::new();
            ps.insert("phi", phi).unwrap();
            ps.insert("khat", Tensor::scalar(rng.random_range(-1.0..1.0))).unwrap();
            let report = check_gradients(&ps, &[], 1e-6, |g, p| {
                weighted_filter_loss(g, p, side, GradientMode::Full, 2.0, &c)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-3, "{n}x{d} {side:?}: {report:?}");
        }
    }
}

#[test]
fn full_mode_stays_finite_on_repeated_singular_values() {
    let mut ps = ParameterSet::new();
    ps.insert("phi", Tensor::<f64>::eye(4)).unwrap();
    ps.insert("khat", Tensor::scalar(0.0)).unwrap();
    let c = Tensor::from_fn([4, 4], |i| (i as f64).sin());
    let mut g = Graph::new();
    let loss = weighted_filter_loss(&mut g, &ps, Side::Top, GradientMode::Full, 5.0, &c).unwrap();
    g.backward(loss, &mut ps).unwrap();
    assert!(ps.get("phi").unwrap().grad.as_ref().unwrap().all_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_weights_are_confined_and_decreasing(khat in -6.0f64..6.0, beta in 0.05f64..4.0, r in 1usize..40) {
        let gate = AlignmentGate::new(khat, beta).unwrap();
        let k = gate.k();
        prop_assert!(k > 0.0 && k < 1.0);
        let w: Vec<f64> = gate.weights(r);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
        // Strict decrease wherever neither weight has rounded to a bound.
        prop_assert!(w.windows(2).all(|p| p[0] > p[1] || p[0] == 1.0 || p[1] == 0.0));
    }

    #[test]
    fn filters_are_complementary(seed in 0u64..1000, khat in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random(&[7, 5], &mut rng);
        let w: Vec<f64> = AlignmentGate::new(khat, 5.0).unwrap().weights(5);
        let top = filter_matrix(&phi, &w, Side::Top).unwrap();
        let bottom = filter_matrix(&phi, &w, Side::Bottom).unwrap();
        prop_assert!(rel_frob(&top.zip_map(&bottom, |a, b| a + b).unwrap(), &phi) <= 1e-6);
    }
}
