//! Gate-weighted reconstruction of a feature matrix from its SVD.
//!
//! `Top` rebuilds `U diag(w ∘ σ) Vᵀ` and keeps the leading spectrum;
//! `Bottom` rebuilds `U diag((1 - w) ∘ σ) Vᵀ` and keeps the trailing one.
//! Both gradient modes produce the same forward value and differ only in
//! how the backward pass treats the singular factors.

use serde::{Deserialize, Serialize};

use super::svd::{thin_svd, SvdFactors};
use crate::error::{Error, Result};
use crate::tensor::{matmul_t, CustomOp, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// U, σ, V are constants; the gradient flows through `Φ V diag(w) Vᵀ`.
    Projected,
    /// Differentiates through the singular factors as well.
    Full,
}

impl std::fmt::Display for GradientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradientMode::Projected => "projected",
            GradientMode::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
}

/// Relative floor on `|σ_j² − σ_i²|` in the full-mode backward pass.
pub const GAP_FLOOR: f64 = 1e-6;

fn effective(weights: &[f64], side: Side) -> Vec<f64> {
    match side {
        Side::Top => weights.to_vec(),
        Side::Bottom => weights.iter().map(|w| 1.0 - w).collect(),
    }
}

/// Non-differentiable filter, for analysis and tests.
pub fn filter_matrix<T: Scalar>(phi: &Tensor<T>, weights: &[T], side: Side) -> Result<Tensor<T>> {
    let svd = thin_svd(phi)?;
    filter_from_svd(&svd, weights, side)
}

pub fn filter_from_svd<T: Scalar>(svd: &SvdFactors<T>, weights: &[T], side: Side) -> Result<Tensor<T>> {
    let w: Vec<f64> = weights.iter().map(|w| w.as_f64()).collect();
    let e: Vec<T> = effective(&w, side).into_iter().map(T::from_f64).collect();
    svd.reconstruct_weighted(&e)
}

struct FilterOp {
    svd: SvdFactors<f64>,
    side: Side,
    mode: GradientMode,
}

impl FilterOp {
    fn backward_f64(&self, grad: &Tensor<f64>, weights: &[f64]) -> Result<(Tensor<f64>, Vec<f64>)> {
        let SvdFactors { u, sigma, v, .. } = &self.svd;
        let r = sigma.len();
        let e = effective(weights, self.side);
        let gv = matmul_t(grad, false, v, false)?; // n×r
                                                   // c_j = u_jᵀ G v_j
        let (n, _) = u.dims2()?;
        let c: Vec<f64> = (0..r)
            .map(|j| (0..n).map(|i| u.at2(i, j) * gv.at2(i, j)).sum())
            .collect();
        let sign = match self.side {
            Side::Top => 1.0,
            Side::Bottom => -1.0,
        };
        let grad_w: Vec<f64> = (0..r).map(|j| sign * sigma[j] * c[j]).collect();

        let projected = matmul_t(&gv.scale_columns(&e)?, false, v, true)?;
        let grad_phi = match self.mode {
            GradientMode::Projected => projected,
            GradientMode::Full => {
                let mut out = self.full_core(&gv, &e)?;
                // (I - UUᵀ) G V diag(e) Vᵀ
                let resid_left = projected.zip_map(
                    &matmul_t(u, false, &matmul_t(u, true, &projected, false)?, false)?,
                    |a, b| a - b,
                )?;
                // U diag(e) Uᵀ G (I - VVᵀ)
                let ug = matmul_t(&u.scale_columns(&e)?, false, &matmul_t(u, true, grad, false)?, false)?;
                let resid_right = ug
                    .zip_map(&matmul_t(&matmul_t(&ug, false, v, false)?, false, v, true)?, |a, b| {
                        a - b
                    })?;
                for ((o, a), b) in out.data_mut().iter_mut().zip(resid_left.data()).zip(resid_right.data()) {
                    *o += a + b;
                }
                out
            }
        };
        Ok((grad_phi, grad_w))
    }

    /// `U [ (F∘(UᵀŪ − ŪᵀU)) S + diag(σ̄) + S (F∘(VᵀV̄ − V̄ᵀV)) ] Vᵀ` with
    /// `Ū = G V S'`, `V̄ = Gᵀ U S'`, `S' = diag(e ∘ σ)`.
    fn full_core(&self, gv: &Tensor<f64>, e: &[f64]) -> Result<Tensor<f64>> {
        let SvdFactors { u, sigma, v, .. } = &self.svd;
        let r = sigma.len();
        let m = matmul_t(u, true, gv, false)?; // UᵀGV, r×r
        let sp: Vec<f64> = sigma.iter().zip(e).map(|(s, e)| s * e).collect();
        let smax2 = sigma.first().map_or(0.0, |s| s * s);
        let floor = GAP_FLOOR * smax2;
        let mut clamped = false;
        let mut inner = Tensor::<f64>::zeros([r, r]);
        for i in 0..r {
            for j in 0..r {
                let val = if i == j {
                    e[i] * m.at2(i, i)
                } else {
                    let mut den = sigma[j] * sigma[j] - sigma[i] * sigma[i];
                    if den.abs() < floor || den == 0.0 {
                        clamped = true;
                        den = if den > 0.0 || (den == 0.0 && j < i) {
                            floor
                        } else {
                            -floor
                        };
                    }
                    if den == 0.0 {
                        0.0
                    } else {
                        let f = 1.0 / den;
                        // (UᵀŪ)_ij = M_ij s'_j ; (VᵀV̄)_ij = M_ji s'_j
                        let ju = f * (m.at2(i, j) * sp[j] - m.at2(j, i) * sp[i]);
                        let kv = f * (m.at2(j, i) * sp[j] - m.at2(i, j) * sp[i]);
                        ju * sigma[j] + sigma[i] * kv
                    }
                };
                inner.data_mut()[i * r + j] = val;
            }
        }
        if clamped {
            log::warn!("spectral filter: near-degenerate singular values, clamping gap denominators to {floor:.3e}");
        }
        matmul_t(&matmul_t(u, false, &inner, false)?, false, v, true)
    }
}

impl<T: Scalar> CustomOp<T> for FilterOp {
    fn name(&self) -> &'static str {
        "spectral_filter"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let weights: Vec<f64> = inputs[1].data().iter().map(|w| w.as_f64()).collect();
        let (gp, gw) = self.backward_f64(&grad.cast(), &weights)?;
        Ok(vec![
            Some(gp.cast()),
            Some(Tensor::new([gw.len()], gw.into_iter().map(T::from_f64).collect())?),
        ])
    }
}

/// Records the filter of `phi` under `weights` (length `min(n, d)`).
pub fn spectral_filter<T: Scalar>(
    g: &mut Graph<T>,
    phi: Var,
    weights: Var,
    side: Side,
    mode: GradientMode,
) -> Result<Var> {
    let (n, d) = g.value(phi).dims2()?;
    let r = n.min(d);
    if g.shape(weights) != [r] {
        return Err(Error::ShapeMismatch {
            op: "spectral_filter",
            lhs: g.shape(phi).to_vec(),
            rhs: g.shape(weights).to_vec(),
        });
    }
    let svd = thin_svd(&g.value(phi).cast::<f64>())?;
    let w: Vec<f64> = g.value(weights).data().iter().map(|w| w.as_f64()).collect();
    let out = filter_from_svd(&svd, &w, side)?.cast::<T>();
    Ok(g.custom(&[phi, weights], out, Box::new(FilterOp { svd, side, mode })))
}
