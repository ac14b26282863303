//! Finite-difference soundness of every differentiable primitive at f64.

use dla_core::gradcheck::check_gradients;
use dla_core::spectral::gate_weights_var;
use dla_core::tensor::{Graph, ParameterSet, Tensor, Var};
use dla_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 10;
const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// `sum(y ∘ c)` for a fixed random `c`, so every output element carries a
/// distinct weight into the loss.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let c = g.constant(random(g.shape(y), &mut rng));
    let prod = g.mul(y, c)?;
    Ok(g.sum(prod))
}

fn run<F>(label: &str, shapes: &[(&str, Vec<usize>)], f: F)
where
    F: Fn(&mut Graph<f64>, &ParameterSet<f64>, u64) -> Result<Var>,
{
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial * 7919 + label.len() as u64);
        let mut ps = ParameterSet::new();
        for (name, shape) in shapes {
            ps.insert(*name, random(shape, &mut rng)).unwrap();
        }
        let report = check_gradients(&ps, &[], H, |g, p| f(g, p, trial)).unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{label} trial {trial}: rel err {:.3e} at {}[{}] (analytic {}, numeric {})",
            report.max_rel_error,
            report.worst_param,
            report.worst_index,
            report.analytic,
            report.numeric
        );
    }
}

#[test]
fn matmul() {
    run("matmul", &[("a", vec![4, 3]), ("b", vec![3, 5])], |g, p, s| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        let y = g.matmul(a, b)?;
        project(g, y, s)
    });
}

#[test]
fn elementwise_add_sub_mul() {
    let shapes = [("a", vec![3, 4]), ("b", vec![3, 4])];
    run("add", &shapes, |g, p, s| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        let y = g.add(a, b)?;
        project(g, y, s)
    });
    run("sub", &shapes, |g, p, s| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        let y = g.sub(a, b)?;
        project(g, y, s)
    });
    run("mul", &shapes, |g, p, s| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        let y = g.mul(a, b)?;
        project(g, y, s)
    });
}

#[test]
fn relu_and_sigmoid() {
    run("relu", &[("x", vec![5, 6])], |g, p, s| {
        let x = g.param(p, "x")?;
        let y = g.relu(x);
        project(g, y, s)
    });
    run("sigmoid", &[("x", vec![5, 6])], |g, p, s| {
        let x = g.param(p, "x")?;
        let y = g.sigmoid(x);
        project(g, y, s)
    });
}

#[test]
fn biases() {
    run("add_bias", &[("x", vec![4, 3]), ("b", vec![3])], |g, p, s| {
        let (x, b) = (g.param(p, "x")?, g.param(p, "b")?);
        let y = g.add_bias(x, b)?;
        project(g, y, s)
    });
    run(
        "add_channel_bias",
        &[("x", vec![2, 3, 2, 2]), ("b", vec![3])],
        |g, p, s| {
            let (x, b) = (g.param(p, "x")?, g.param(p, "b")?);
            let y = g.add_channel_bias(x, b)?;
            project(g, y, s)
        },
    );
}

#[test]
fn reshape_scale_and_reductions() {
    run("flatten", &[("x", vec![2, 3, 2])], |g, p, s| {
        let x = g.param(p, "x")?;
        let y = g.flatten(x)?;
        project(g, y, s)
    });
    run("scale", &[("x", vec![7])], |g, p, s| {
        let x = g.param(p, "x")?;
        let y = g.scale(x, -2.5);
        project(g, y, s)
    });
    run("sum", &[("x", vec![3, 3])], |g, p, _| {
        let x = g.param(p, "x")?;
        let sq = g.mul(x, x)?;
        Ok(g.sum(sq))
    });
    run("mean", &[("x", vec![3, 5])], |g, p, _| {
        let x = g.param(p, "x")?;
        let y = g.sigmoid(x);
        Ok(g.mean(y))
    });
    run("sum_squares", &[("x", vec![4, 2])], |g, p, _| {
        let x = g.param(p, "x")?;
        Ok(g.sum_squares(x))
    });
    run("squared_error", &[("x", vec![4, 2])], |g, p, s| {
        let x = g.param(p, "x")?;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        g.squared_error(x, random(&[4, 2], &mut rng))
    });
}

#[test]
fn softmax_and_cross_entropy() {
    run("softmax", &[("z", vec![4, 5])], |g, p, s| {
        let z = g.param(p, "z")?;
        let y = g.softmax(z)?;
        project(g, y, s)
    });
    run("softmax_cross_entropy", &[("z", vec![6, 4])], |g, p, s| {
        let z = g.param(p, "z")?;
        let labels: Vec<usize> = (0..6).map(|i| (i + s as usize) % 4).collect();
        Ok(g.softmax_cross_entropy(z, &labels)?.0)
    });
}

#[test]
fn conv2d_variants() {
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        run(
            "conv2d",
            &[("x", vec![2, 2, 5, 5]), ("k", vec![3, 2, 3, 3])],
            move |g, p, s| {
                let (x, k) = (g.param(p, "x")?, g.param(p, "k")?);
                let y = g.conv2d(x, k, stride, padding)?;
                project(g, y, s)
            },
        );
    }
}

#[test]
fn maxpool2() {
    run("maxpool2", &[("x", vec![2, 2, 4, 5])], |g, p, s| {
        let x = g.param(p, "x")?;
        let y = g.maxpool2(x)?;
        project(g, y, s)
    });
}

#[test]
fn gate_weights() {
    for beta in [0.5, 2.0, 5.0] {
        run("gate_weights", &[("khat", vec![])], move |g, p, s| {
            let k = g.param(p, "khat")?;
            let w = gate_weights_var(g, k, beta, 6)?;
            project(g, w, s)
        });
    }
}

#[test]
fn softmax_rows_sum_to_one_and_loss_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let mut g = Graph::<f64>::new();
        let z = g.constant(random(&[5, 10], &mut rng).map(|v| v * 30.0));
        let y = g.softmax(z).unwrap();
        for row in g.value(y).data().chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let (loss, _) = g.softmax_cross_entropy(z, &[0, 1, 2, 3, 4]).unwrap();
        assert!(g.value(loss).item() >= 0.0);
    }
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let z = random(&[4, 3], &mut rng);
    let labels = [2usize, 0, 1, 1];
    let mut expected = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &z.data()[i * 3..i * 3 + 3];
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        expected -= (row[l].exp() / denom).ln();
    }
    expected /= 4.0;
    let mut g = Graph::<f64>::new();
    let zv = g.constant(z);
    let (loss, _) = g.softmax_cross_entropy(zv, &labels).unwrap();
    assert!((g.value(loss).item() - expected).abs() < 1e-10);
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParameterSet::<f32>::new();
        ps.insert("x", random(&[2, 1, 6, 6], &mut rng).cast()).unwrap();
        ps.insert("k", random(&[3, 1, 3, 3], &mut rng).cast()).unwrap();
        let mut g = Graph::new();
        let x = g.param(&ps, "x").unwrap();
        let k = g.param(&ps, "k").unwrap();
        let y = g.conv2d(x, k, 1, 1).unwrap();
        let y = g.relu(y);
        let y = g.maxpool2(y).unwrap();
        let loss = g.sum_squares(y);
        let value = g.value(loss).item();
        g.backward(loss, &mut ps).unwrap();
        (value, ps)
    };
    let (a, pa) = build();
    let (b, pb) = build();
    assert_eq!(a.to_bits(), b.to_bits());
    for ((_, x), (_, y)) in pa.iter().zip(pb.iter()) {
        assert_eq!(x.grad.as_ref().unwrap(), y.grad.as_ref().unwrap());
    }
}
