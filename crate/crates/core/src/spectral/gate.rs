//! Sigmoid soft-gating of a singular spectrum with a learnable rank.
//!
//! The rank parameter `khat` is unconstrained; `k = sigmoid(khat)` is the
//! normalized rank in `(0, 1)` and index `i` (1-based) of an `r`-long
//! spectrum receives weight `w_i = 1 / (1 + exp(beta * (i - k * r)))`.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, CustomOp, Graph, Scalar, Tensor, Var};

/// Learnable rank `khat` and sharpness `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentGate {
    pub khat: f64,
    pub beta: f64,
}

impl AlignmentGate {
    pub fn new(khat: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("gate sharpness must be > 0, got {beta}")));
        }
        Ok(Self { khat, beta })
    }

    /// Gate whose midpoint sits at the real-valued index `position` of an
    /// `r`-long spectrum.
    pub fn centered_at(position: f64, r: usize, beta: f64) -> Result<Self> {
        let k = position / r as f64;
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::invalid(format!(
                "gate position {position} must lie strictly inside (0, {r})"
            )));
        }
        Self::new((k / (1.0 - k)).ln(), beta)
    }

    /// Normalized rank in `(0, 1)`.
    pub fn k(&self) -> f64 {
        sigmoid(self.khat)
    }

    pub fn weights<T: Scalar>(&self, r: usize) -> Vec<T> {
        gate_weights(T::from_f64(self.khat), T::from_f64(self.beta), r)
    }
}

/// `w_i` for `i = 1..=r`.
pub fn gate_weights<T: Scalar>(khat: T, beta: T, r: usize) -> Vec<T> {
    let kr = sigmoid(khat) * T::from_f64(r as f64);
    (1..=r).map(|i| sigmoid(beta * (kr - T::from_f64(i as f64)))).collect()
}

struct GateOp {
    beta: f64,
    r: usize,
}

impl<T: Scalar> CustomOp<T> for GateOp {
    fn name(&self) -> &'static str {
        "gate_weights"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let k = sigmoid(inputs[0].item());
        // dw_i/dkhat = w_i (1 - w_i) * beta * r * k (1 - k)
        let outer = T::from_f64(self.beta * self.r as f64) * k * (T::one() - k);
        let total: T = output
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&w, &g)| g * w * (T::one() - w))
            .sum();
        Ok(vec![Some(Tensor::full(inputs[0].shape().to_vec(), total * outer))])
    }
}

/// Records the gate weights as a differentiable function of the scalar
/// parameter `khat`.
pub fn gate_weights_var<T: Scalar>(g: &mut Graph<T>, khat: Var, beta: f64, r: usize) -> Result<Var> {
    if g.value(khat).numel() != 1 {
        return Err(Error::invalid(format!(
            "khat must be a scalar, got shape {:?}",
            g.shape(khat)
        )));
    }
    if r == 0 || !(beta > 0.0) {
        return Err(Error::invalid(format!(
            "gate needs r >= 1 and beta > 0 (r={r}, beta={beta})"
        )));
    }
    let w = gate_weights(g.value(khat).item(), T::from_f64(beta), r);
    Ok(g.custom(&[khat], Tensor::new([r], w)?, Box::new(GateOp { beta, r })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_is_exactly_half() {
        // k*r = 5 exactly when k = 0.5.
        let w: Vec<f64> = gate_weights(0.0, 3.0, 10);
        assert_eq!(w[4], 0.5);
        for beta in [0.1, 5.0, 1e4] {
            let w: Vec<f64> = gate_weights(0.0, beta, 10);
            assert_eq!(w[4], 0.5);
        }
    }

    #[test]
    fn hard_limit_selects_leading_indices() {
        let gate = AlignmentGate::centered_at(5.5, 10, 1e4).unwrap();
        let w: Vec<f64> = gate.weights(10);
        for (i, wi) in w.iter().enumerate() {
            let expected = if i < 5 { 1.0 } else { 0.0 };
            assert!((wi - expected).abs() < 1e-9, "w[{i}] = {wi}");
        }
    }

    #[test]
    fn very_negative_rank_shrinks_all_weights() {
        let w: Vec<f64> = gate_weights(-40.0, 5.0, 8);
        assert!(w.iter().all(|&x| x < 0.01));
        assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn rejects_non_positive_beta() {
        assert!(AlignmentGate::new(0.0, 0.0).is_err());
        assert!(AlignmentGate::new(0.0, -1.0).is_err());
    }
}
