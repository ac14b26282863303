//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! All arithmetic runs in `f64` whatever the element type of the input. The
//! factors are returned sorted by decreasing singular value, with each column
//! of `V` oriented so that its largest-magnitude entry is nonnegative (first
//! index wins ties) and the matching column of `U` flipped with it.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `phi ≈ u · diag(sigma) · vᵀ` with `r = min(n, d)` retained triples.
#[derive(Clone, Debug)]
pub struct SvdFactors<T> {
    /// `n × r`, orthonormal columns.
    pub u: Tensor<T>,
    /// Length `r`, nonincreasing, nonnegative.
    pub sigma: Vec<T>,
    /// `d × r`, orthonormal columns.
    pub v: Tensor<T>,
    /// Jacobi sweeps used.
    pub sweeps: usize,
}

impl<T: Scalar> SvdFactors<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `u · diag(weights ∘ sigma) · vᵀ`.
    pub fn reconstruct_weighted(&self, weights: &[T]) -> Result<Tensor<T>> {
        if weights.len() != self.sigma.len() {
            return Err(Error::ShapeMismatch {
                op: "reconstruct_weighted",
                lhs: vec![self.sigma.len()],
                rhs: vec![weights.len()],
            });
        }
        let s: Vec<T> = self.sigma.iter().zip(weights).map(|(&s, &w)| s * w).collect();
        crate::tensor::matmul_t(&self.u.scale_columns(&s)?, false, &self.v, true)
    }

    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        self.reconstruct_weighted(&vec![T::one(); self.rank()])
    }

    pub fn cast<U: Scalar>(&self) -> SvdFactors<U> {
        SvdFactors {
            u: self.u.cast(),
            sigma: self.sigma.iter().map(|&s| U::from_f64(s.as_f64())).collect(),
            v: self.v.cast(),
            sweeps: self.sweeps,
        }
    }
}

/// Orthogonalizes the `p` columns (each of length `m`, stored contiguously)
/// of `w` in place and accumulates the rotations into `v` (`p × p`, column
/// major). Returns the number of sweeps.
fn jacobi_columns(w: &mut [f64], v: &mut [f64], m: usize, p: usize, frob: f64) -> Result<usize> {
    let tol = (m as f64) * f64::EPSILON;
    let cap = 100 * p.max(1);
    let mut norms: Vec<f64> = (0..p)
        .map(|j| dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]))
        .collect();
    for sweep in 1..=cap {
        let mut rotated = false;
        let mut off = 0.0f64;
        for i in 0..p {
            for j in i + 1..p {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (ci, cj) = pair_mut(w, i, j, m);
                let gamma = dot(ci, cj);
                off += gamma * gamma;
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(ci, cj, c, s);
                let (vi, vj) = pair_mut(v, i, j, p);
                rotate(vi, vj, c, s);
                norms[i] = alpha - t * gamma;
                norms[j] = beta + t * gamma;
            }
        }
        if !rotated {
            return Ok(sweep);
        }
        // Refresh to keep the cached norms from drifting.
        for (j, n) in norms.iter_mut().enumerate() {
            *n = dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]);
        }
        if sweep == cap {
            let smax = norms.iter().cloned().fold(0.0, f64::max).sqrt();
            let smin = norms.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
            return Err(Error::SvdNoConvergence {
                sweeps: sweep,
                off_diagonal: off.sqrt() / frob.max(f64::MIN_POSITIVE),
                sigma_max: smax,
                sigma_min: smin,
            });
        }
    }
    unreachable!("loop returns on the final sweep")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pair_mut(buf: &mut [f64], i: usize, j: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (head, tail) = buf.split_at_mut(j * len);
    (&mut head[i * len..(i + 1) * len], &mut tail[..len])
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Column-major `m × p` result of the tall-case factorization.
struct Tall {
    u: Vec<f64>,
    sigma: Vec<f64>,
    v: Vec<f64>,
    sweeps: usize,
}

/// Factorizes the column-major `m × p` matrix `a` with `m >= p`.
fn svd_tall(mut a: Vec<f64>, m: usize, p: usize) -> Result<Tall> {
    let frob = dot(&a, &a).sqrt();
    let mut v = vec![0.0; p * p];
    for j in 0..p {
        v[j * p + j] = 1.0;
    }
    let sweeps = jacobi_columns(&mut a, &mut v, m, p, frob)?;

    let raw: Vec<f64> = (0..p)
        .map(|j| dot(&a[j * m..(j + 1) * m], &a[j * m..(j + 1) * m]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| raw[y].total_cmp(&raw[x]));

    let smax = raw.iter().cloned().fold(0.0, f64::max);
    let floor = smax * (m as f64) * f64::EPSILON;
    let mut u = vec![0.0; m * p];
    let mut vs = vec![0.0; p * p];
    let mut sigma = vec![0.0; p];
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = raw[j];
        vs[k * p..(k + 1) * p].copy_from_slice(&v[j * p..(j + 1) * p]);
        if raw[j] > floor && raw[j] > 0.0 {
            for (dst, src) in u[k * m..(k + 1) * m].iter_mut().zip(&a[j * m..(j + 1) * m]) {
                *dst = src / raw[j];
            }
        } else {
            deficient.push(k);
        }
    }
    complete_basis(&mut u, m, p, &deficient);
    Ok(Tall {
        u,
        sigma,
        v: vs,
        sweeps,
    })
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_basis(u: &mut [f64], m: usize, p: usize, missing: &[usize]) {
    let mut filled: Vec<bool> = (0..p).map(|k| !missing.contains(&k)).collect();
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            let mut e = vec![0.0; m];
            e[candidate % m] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for q in 0..p {
                    if filled[q] {
                        let col = &u[q * m..(q + 1) * m];
                        let proj = dot(&e, col);
                        for (x, c) in e.iter_mut().zip(col) {
                            *x -= proj * c;
                        }
                    }
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 0.5 {
                for (dst, x) in u[k * m..(k + 1) * m].iter_mut().zip(&e) {
                    *dst = x / n;
                }
                filled[k] = true;
                break;
            }
        }
    }
}

/// Thin SVD of an `n × d` matrix.
pub fn thin_svd<T: Scalar>(phi: &Tensor<T>) -> Result<SvdFactors<T>> {
    let (n, d) = phi.dims2()?;
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!("thin_svd needs a nonempty matrix, got {n}x{d}")));
    }
    if !phi.all_finite() {
        return Err(Error::NonFinite);
    }
    let x = phi.data();
    let r = n.min(d);
    // Column-major buffers; the shorter side becomes the column count.
    let (mut u_rm, mut v_rm) = (vec![0.0; n * r], vec![0.0; d * r]);
    let (sigma, sweeps);
    if n >= d {
        let cols: Vec<f64> = (0..d)
            .flat_map(|j| (0..n).map(move |i| x[i * d + j].as_f64()))
            .collect();
        let t = svd_tall(cols, n, d)?;
        for k in 0..r {
            for i in 0..n {
                u_rm[i * r + k] = t.u[k * n + i];
            }
            for i in 0..d {
                v_rm[i * r + k] = t.v[k * d + i];
            }
        }
        sigma = t.sigma;
        sweeps = t.sweeps;
    } else {
        // Columns of phiᵀ are the rows of phi.
        let cols: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        let t = svd_tall(cols, d, n)?;
        for k in 0..r {
            for i in 0..d {
                v_rm[i * r + k] = t.u[k * d + i];
            }
            for i in 0..n {
                u_rm[i * r + k] = t.v[k * n + i];
            }
        }
        sigma = t.sigma;
        sweeps = t.sweeps;
    }
    orient_columns(&mut u_rm, &mut v_rm, n, d, r);
    Ok(SvdFactors {
        u: Tensor::new([n, r], u_rm.into_iter().map(T::from_f64).collect())?,
        sigma: sigma.into_iter().map(T::from_f64).collect(),
        v: Tensor::new([d, r], v_rm.into_iter().map(T::from_f64).collect())?,
        sweeps,
    })
}

fn orient_columns(u: &mut [f64], v: &mut [f64], n: usize, d: usize, r: usize) {
    for k in 0..r {
        let mut best = 0;
        for i in 1..d {
            if v[i * r + k].abs() > v[best * r + k].abs() {
                best = i;
            }
        }
        if v[best * r + k] < 0.0 {
            for i in 0..d {
                v[i * r + k] = -v[i * r + k];
            }
            for i in 0..n {
                u[i * r + k] = -u[i * r + k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul_t;

    fn orthonormality_error(q: &Tensor<f64>) -> f64 {
        let (_, r) = q.dims2().unwrap();
        let g = matmul_t(q, true, q, false).unwrap();
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.at2(i, j) - target).abs());
            }
        }
        worst
    }

    fn lcg_matrix(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn([n, d], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn diagonal_matrix() {
        let a = Tensor::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let f = thin_svd(&a).unwrap();
        assert_eq!(f.sigma, vec![3.0, 2.0, 1.0]);
        assert_eq!(f.u, Tensor::eye(3));
        assert_eq!(f.v, Tensor::eye(3));
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let f = thin_svd(&Tensor::<f64>::eye(4)).unwrap();
        assert_eq!(f.sigma, vec![1.0; 4]);
    }

    #[test]
    fn wide_tall_and_square_shapes() {
        for (n, d) in [(7, 3), (3, 7), (5, 5), (1, 4), (4, 1)] {
            let a = lcg_matrix(n, d, (n * 31 + d) as u64);
            let f = thin_svd(&a).unwrap();
            let r = n.min(d);
            assert_eq!(f.u.shape(), &[n, r]);
            assert_eq!(f.v.shape(), &[d, r]);
            assert!(orthonormality_error(&f.u) < 1e-12);
            assert!(orthonormality_error(&f.v) < 1e-12);
            assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
            let rec = f.reconstruct().unwrap();
            let err = rec.zip_map(&a, |x, y| x - y).unwrap().norm();
            assert!(err <= 1e-12 * a.norm(), "{n}x{d}: {err}");
        }
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_u() {
        // Two identical columns and a zero column.
        let a = Tensor::<f64>::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
            vec![-1.0, -1.0, 0.0],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        let f = thin_svd(&a).unwrap();
        assert!(f.sigma[1].abs() < 1e-12 && f.sigma[2] == 0.0);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);
        let rec = f.reconstruct().unwrap();
        assert!(rec.zip_map(&a, |x, y| x - y).unwrap().norm() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let f = thin_svd(&Tensor::<f64>::zeros([3, 2])).unwrap();
        assert_eq!(f.sigma, vec![0.0, 0.0]);
        assert!(orthonormality_error(&f.u) < 1e-12);
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let a = lcg_matrix(6, 4, 9);
        let neg = a.map(|x| -x);
        let (f, g) = (thin_svd(&a).unwrap(), thin_svd(&neg).unwrap());
        // Negating the input flips U but leaves the oriented V alone.
        assert_eq!(f.v, g.v);
        for k in 0..4 {
            let col: Vec<f64> = (0..4).map(|i| f.v.at2(i, k)).collect();
            let big = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Tensor::<f64>::eye(2);
        a.data_mut()[1] = f64::NAN;
        assert!(matches!(thin_svd(&a), Err(Error::NonFinite)));
    }

    #[test]
    fn f32_input_meets_single_precision_bounds() {
        let a: Tensor<f32> = lcg_matrix(20, 12, 4).cast();
        let f = thin_svd(&a).unwrap();
        let rec = f.reconstruct().unwrap();
        let err = rec.zip_map(&a, |x, y| x - y).unwrap().norm();
        assert!(err <= 1e-5 * a.norm());
        assert!(orthonormality_error(&f.u.cast()) < 1e-6);
    }
}
