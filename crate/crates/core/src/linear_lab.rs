//! Linear-regression laboratory for the label-alignment identities.
//!
//! A [`LinearProblem`] carries a source representation `Φ` with labels `y`
//! and a target representation `Φ̃`, together with their thin SVDs. The
//! objective forms below are evaluated exactly at f64 with hard rank cutoffs,
//! so the algebraic identities between them can be checked numerically.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::{thin_svd, SvdFactors};
use crate::tensor::Tensor;

/// Gradient-norm threshold for [`solve_linear_uda`].
pub const GRAD_TOL: f64 = 1e-6;
/// Consecutive objective increases treated as divergence.
pub const DIVERGENCE_STEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct LinearProblem {
    pub phi: Tensor<f64>,
    pub y: Vec<f64>,
    pub phi_tilde: Tensor<f64>,
    /// Hidden target labels, when the generator knows them.
    pub y_tilde: Option<Vec<f64>>,
    pub k_star: usize,
    pub k_tilde_star: usize,
    pub noise: f64,
    svd: SvdFactors<f64>,
    svd_tilde: SvdFactors<f64>,
    y_u: Vec<f64>,
    y_perp_sq: f64,
}

impl LinearProblem {
    /// Wraps explicit matrices. Requires `d ≤ n` and `d ≤ ñ` so both thin
    /// SVDs carry `d` singular values.
    pub fn from_parts(
        phi: Tensor<f64>,
        y: Vec<f64>,
        phi_tilde: Tensor<f64>,
        k_star: usize,
        k_tilde_star: usize,
        noise: f64,
    ) -> Result<Self> {
        let (n, d) = phi.dims2()?;
        let (nt, dt) = phi_tilde.dims2()?;
        if dt != d {
            return Err(Error::ShapeMismatch {
                op: "linear_problem",
                lhs: phi.shape().to_vec(),
                rhs: phi_tilde.shape().to_vec(),
            });
        }
        if y.len() != n {
            return Err(Error::invalid(format!("labels have length {}, expected {n}", y.len())));
        }
        if d > n || d > nt {
            return Err(Error::invalid(format!(
                "need d <= n for both domains, got d={d}, n={n}, target n={nt}"
            )));
        }
        if k_star < 1 || k_star > d || k_tilde_star < 1 || k_tilde_star > d {
            return Err(Error::invalid(format!(
                "alignment ranks must lie in [1, {d}], got {k_star} and {k_tilde_star}"
            )));
        }
        let svd = thin_svd(&phi)?;
        let svd_tilde = thin_svd(&phi_tilde)?;
        let y_u = mat_t_vec(&svd.u, &y);
        let recon = mat_vec(&svd.u, &y_u);
        let y_perp_sq = y.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(LinearProblem {
            phi,
            y,
            phi_tilde,
            y_tilde: None,
            k_star,
            k_tilde_star,
            noise,
            svd,
            svd_tilde,
            y_u,
            y_perp_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi.shape()[1]
    }

    pub fn svd(&self) -> &SvdFactors<f64> {
        &self.svd
    }

    pub fn svd_tilde(&self) -> &SvdFactors<f64> {
        &self.svd_tilde
    }

    /// `Uᵀy` over the thin basis.
    pub fn y_u(&self) -> &[f64] {
        &self.y_u
    }

    /// Entries of `Uᵀy` past the true alignment rank.
    pub fn alignment_tail(&self) -> &[f64] {
        &self.y_u[self.k_star..]
    }

    /// Label mass that the decomposed form discards at rank `k`: the tail
    /// of `Uᵀy` plus the part of `y` outside the column span of `U`.
    pub fn dropped_mass(&self, k: usize) -> f64 {
        self.y_u[k.min(self.y_u.len())..].iter().map(|v| v * v).sum::<f64>() + self.y_perp_sq
    }
}

fn mat_vec(a: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    (0..n)
        .map(|i| (0..d).map(|j| a.data()[i * d + j] * x[j]).sum())
        .collect()
}

fn mat_t_vec(a: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += a.data()[i * d + j] * x[i];
        }
    }
    out
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `rows × cols` matrix with orthonormal columns from Gram-Schmidt (applied
/// twice) on Gaussian columns.
fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while q.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for b in &q {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = sq_norm(&v).sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor::from_fn([rows, cols], |idx| q[idx % cols][idx / cols])
}

fn spectrum(d: usize, top: f64, ratio: f64) -> Vec<f64> {
    (0..d).map(|i| top * ratio.powi(i as i32)).collect()
}

fn build(u: &Tensor<f64>, sigma: &[f64], v: &Tensor<f64>) -> Result<Tensor<f64>> {
    crate::tensor::matmul_t(&u.scale_columns(sigma)?, false, v, true)
}

/// Synthetic problem with exact label alignment at rank `k_star` when
/// `noise` is zero. The target gets its own factors and spectrum, and
/// hidden labels aligned at rank `k_tilde_star`.
pub fn gen_synthetic(
    n: usize,
    d: usize,
    k_star: usize,
    k_tilde_star: usize,
    noise: f64,
    seed: u64,
) -> Result<LinearProblem> {
    if d == 0 || d > n || k_star < 1 || k_star > d || k_tilde_star < 1 || k_tilde_star > d {
        return Err(Error::invalid(format!(
            "need 1 <= k_star, k_tilde_star <= d <= n, got n={n} d={d} k_star={k_star} k_tilde_star={k_tilde_star}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be finite and >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let u = random_orthonormal(n, d, &mut rng);
    let v = random_orthonormal(d, d, &mut rng);
    let phi = build(&u, &spectrum(d, 4.0, 0.8), &v)?;
    let c: Vec<f64> = (0..k_star).map(|_| gaussian(&mut rng)).collect();
    let mut y = mat_vec(&u.columns(0..k_star)?, &c);
    for yi in &mut y {
        *yi += noise * gaussian(&mut rng);
    }

    let ut = random_orthonormal(n, d, &mut rng);
    let vt = random_orthonormal(d, d, &mut rng);
    let phi_tilde = build(&ut, &spectrum(d, 3.0, 0.75), &vt)?;
    let ct: Vec<f64> = (0..k_tilde_star).map(|_| gaussian(&mut rng)).collect();
    let y_tilde = mat_vec(&ut.columns(0..k_tilde_star)?, &ct);

    let mut problem = LinearProblem::from_parts(phi, y, phi_tilde, k_star, k_tilde_star, noise)?;
    problem.y_tilde = Some(y_tilde);
    Ok(problem)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveForm {
    /// `‖Φw − y‖²`
    Full,
    /// `Σ_{i≤k}(σ_i w^V_i − y^U_i)² + Σ_{i>k}(σ_i w^V_i)²`
    Decomposed,
    /// `‖Φw − y‖² − Σ_{i>k}(σ_i w^V_i)² + Σ_{i>k}(σ̃_i w^Ṽ_i)²`
    Uda,
    /// `Σ_{i≤k}(σ_i w^V_i − y^U_i)² + Σ_{i>k}(σ̃_i w^Ṽ_i)²`
    Combined,
    /// `‖U Σ⁺ Vᵀ w − y‖²`, evaluated as a matrix product.
    MatrixTop,
    /// `‖Ũ Σ̃⁻ Ṽᵀ w‖²`, evaluated as a matrix product.
    MatrixBottom,
    /// `Σ_{i≤k}(σ_i w^V_i − y^U_i)²`
    SumTop,
    /// `Σ_{i>k}(σ̃_i w^Ṽ_i)²`
    SumBottom,
}

impl ObjectiveForm {
    pub const ALL: [ObjectiveForm; 8] = [
        ObjectiveForm::Full,
        ObjectiveForm::Decomposed,
        ObjectiveForm::Uda,
        ObjectiveForm::Combined,
        ObjectiveForm::MatrixTop,
        ObjectiveForm::MatrixBottom,
        ObjectiveForm::SumTop,
        ObjectiveForm::SumBottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveForm::Full => "full",
            ObjectiveForm::Decomposed => "decomposed",
            ObjectiveForm::Uda => "uda",
            ObjectiveForm::Combined => "combined",
            ObjectiveForm::MatrixTop => "matrix_top",
            ObjectiveForm::MatrixBottom => "matrix_bottom",
            ObjectiveForm::SumTop => "sum_top",
            ObjectiveForm::SumBottom => "sum_bottom",
        }
    }
}

impl fmt::Display for ObjectiveForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveForm::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let known: Vec<&str> = ObjectiveForm::ALL.iter().map(|f| f.name()).collect();
            Error::invalid(format!(
                "unknown objective form `{s}` (expected one of {})",
                known.join(", ")
            ))
        })
    }
}

/// Value of `form` at weights `w` with hard cutoff `k` (used for both the
/// source and the target rank).
pub fn linear_objective(problem: &LinearProblem, w: &[f64], k: usize, form: ObjectiveForm) -> Result<f64> {
    let d = problem.dim();
    if w.len() != d {
        return Err(Error::invalid(format!("weights have length {}, expected {d}", w.len())));
    }
    if k > d {
        return Err(Error::invalid(format!("rank cutoff {k} exceeds d={d}")));
    }
    let s = &problem.svd.sigma;
    let st = &problem.svd_tilde.sigma;
    let wv = mat_t_vec(&problem.svd.v, w);
    let wvt = mat_t_vec(&problem.svd_tilde.v, w);
    let yu = &problem.y_u;

    let fit_top = || -> f64 { (0..k).map(|i| (s[i] * wv[i] - yu[i]).powi(2)).sum() };
    let src_tail = || -> f64 { (k..d).map(|i| (s[i] * wv[i]).powi(2)).sum() };
    let tgt_tail = || -> f64 { (k..d).map(|i| (st[i] * wvt[i]).powi(2)).sum() };
    let full = || -> f64 {
        let pred = mat_vec(&problem.phi, w);
        pred.iter().zip(&problem.y).map(|(p, y)| (p - y).powi(2)).sum()
    };

    Ok(match form {
        ObjectiveForm::Full => full(),
        ObjectiveForm::Decomposed => fit_top() + src_tail(),
        ObjectiveForm::Uda => full() - src_tail() + tgt_tail(),
        ObjectiveForm::Combined => fit_top() + tgt_tail(),
        ObjectiveForm::SumTop => fit_top(),
        ObjectiveForm::SumBottom => tgt_tail(),
        ObjectiveForm::MatrixTop => {
            let gated: Vec<f64> = (0..d).map(|i| if i < k { s[i] } else { 0.0 }).collect();
            let reduced = build(&problem.svd.u, &gated, &problem.svd.v)?;
            let pred = mat_vec(&reduced, w);
            pred.iter().zip(&problem.y).map(|(p, y)| (p - y).powi(2)).sum()
        }
        ObjectiveForm::MatrixBottom => {
            let gated: Vec<f64> = (0..d).map(|i| if i < k { 0.0 } else { st[i] }).collect();
            let reduced = build(&problem.svd_tilde.u, &gated, &problem.svd_tilde.v)?;
            sq_norm(&mat_vec(&reduced, w))
        }
    })
}

/// Gradient of the combined form with respect to `w`.
pub fn combined_gradient(problem: &LinearProblem, w: &[f64], k: usize) -> Vec<f64> {
    let d = problem.dim();
    let s = &problem.svd.sigma;
    let st = &problem.svd_tilde.sigma;
    let wv = mat_t_vec(&problem.svd.v, w);
    let wvt = mat_t_vec(&problem.svd_tilde.v, w);
    let a: Vec<f64> = (0..d)
        .map(|i| {
            if i < k {
                2.0 * s[i] * (s[i] * wv[i] - problem.y_u[i])
            } else {
                0.0
            }
        })
        .collect();
    let b: Vec<f64> = (0..d)
        .map(|i| if i < k { 0.0 } else { 2.0 * st[i] * st[i] * wvt[i] })
        .collect();
    let ga = mat_vec(&problem.svd.v, &a);
    let gb = mat_vec(&problem.svd_tilde.v, &b);
    ga.iter().zip(&gb).map(|(x, y)| x + y).collect()
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub w: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Gradient descent on the combined form from `w = 0`.
pub fn solve_linear_uda(problem: &LinearProblem, k: usize, alpha: f64, max_iters: usize) -> Result<LinearSolution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {alpha}")));
    }
    let d = problem.dim();
    if k > d {
        return Err(Error::invalid(format!("rank cutoff {k} exceeds d={d}")));
    }
    let mut w = vec![0.0; d];
    let mut objective = linear_objective(problem, &w, k, ObjectiveForm::Combined)?;
    let mut rises = 0;
    let mut iterations = 0;
    loop {
        let grad = combined_gradient(problem, &w, k);
        let grad_norm = sq_norm(&grad).sqrt();
        if grad_norm <= GRAD_TOL || iterations >= max_iters {
            return Ok(LinearSolution {
                w,
                iterations,
                grad_norm,
                objective,
                converged: grad_norm <= GRAD_TOL,
            });
        }
        w.iter_mut().zip(&grad).for_each(|(wi, gi)| *wi -= alpha * gi);
        iterations += 1;
        let next = linear_objective(problem, &w, k, ObjectiveForm::Combined)?;
        if !next.is_finite() {
            return Err(Error::Diverged {
                step_size: alpha,
                steps: rises + 1,
            });
        }
        rises = if next > objective { rises + 1 } else { 0 };
        if rises >= DIVERGENCE_STEPS {
            return Err(Error::Diverged {
                step_size: alpha,
                steps: rises,
            });
        }
        objective = next;
    }
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_residual(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Clone, Debug)]
pub struct LabConfig {
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub k_star: usize,
    pub noise: f64,
    pub seeds: u64,
    pub first_seed: u64,
    /// Random weight vectors per problem.
    pub trials: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            ns: vec![64],
            ds: vec![16],
            k_star: 4,
            noise: 0.0,
            seeds: 20,
            first_seed: 0,
            trials: 100,
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ds.is_empty() || self.seeds == 0 || self.trials == 0 {
            return Err(Error::invalid(
                "lab needs at least one n, one d, one seed and one trial",
            ));
        }
        for &n in &self.ns {
            for &d in &self.ds {
                if d > n {
                    return Err(Error::invalid(format!("lab requires d <= n, got d={d} > n={n}")));
                }
                if self.k_star < 1 || self.k_star > d {
                    return Err(Error::invalid(format!("k_star={} must lie in [1, d={d}]", self.k_star)));
                }
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ResidualRow {
    pub check: &'static str,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Relative residual, or for bound checks the ratio of the discrepancy
    /// to its bound.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub check: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct LabReport {
    pub checks: Vec<CheckOutcome>,
    pub rows: Vec<ResidualRow>,
}

impl LabReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, row: ResidualRow, tolerance: f64) {
        match self.checks.iter_mut().find(|c| c.check == row.check) {
            Some(c) => {
                c.worst = c.worst.max(row.residual);
                c.passed = c.passed && row.residual <= tolerance;
            }
            None => self.checks.push(CheckOutcome {
                check: row.check,
                worst: row.residual,
                tolerance,
                passed: row.residual <= tolerance,
            }),
        }
        self.rows.push(row);
    }
}

/// Identity tolerance under exact alignment.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Bound on `|(Uᵀy)_i|` past the alignment rank with zero noise.
pub const ALIGNMENT_TOL: f64 = 1e-10;

fn random_weights(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| gaussian(rng)).collect()
}

/// Runs the identity suite over every configured size and seed.
///
/// With zero noise the identities are asserted as equalities. With noise the
/// source-label identities are replaced by bounds in terms of the dropped
/// label mass `D`: `|full − decomposed| = |uda − combined| ≤ D + 2√(D·reg)`
/// and `matrix_top − sum_top = D`.
pub fn run_lab(cfg: &LabConfig) -> Result<LabReport> {
    cfg.validate()?;
    let k = cfg.k_star;
    let exact = cfg.noise == 0.0;
    let mut report = LabReport::default();
    for &n in &cfg.ns {
        for &d in &cfg.ds {
            for seed in cfg.first_seed..cfg.first_seed + cfg.seeds {
                let p = gen_synthetic(n, d, k, k, cfg.noise, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                let dropped = p.dropped_mass(k);
                for trial in 0..cfg.trials {
                    let w = random_weights(d, &mut rng);
                    let value = |form| linear_objective(&p, &w, k, form);
                    let full = value(ObjectiveForm::Full)?;
                    let dec = value(ObjectiveForm::Decomposed)?;
                    let uda = value(ObjectiveForm::Uda)?;
                    let comb = value(ObjectiveForm::Combined)?;
                    let mtop = value(ObjectiveForm::MatrixTop)?;
                    let stop = value(ObjectiveForm::SumTop)?;
                    let mbot = value(ObjectiveForm::MatrixBottom)?;
                    let sbot = value(ObjectiveForm::SumBottom)?;
                    let row = |check, lhs, rhs, residual| ResidualRow {
                        check,
                        n,
                        d,
                        seed,
                        trial,
                        lhs,
                        rhs,
                        residual,
                    };
                    report.push(
                        row("matrix_bottom_vs_sum", mbot, sbot, relative_residual(mbot, sbot)),
                        IDENTITY_TOL,
                    );
                    if exact {
                        report.push(
                            row("full_vs_decomposed", full, dec, relative_residual(full, dec)),
                            IDENTITY_TOL,
                        );
                        report.push(
                            row("uda_vs_combined", uda, comb, relative_residual(uda, comb)),
                            IDENTITY_TOL,
                        );
                        report.push(
                            row("matrix_top_vs_sum", mtop, stop, relative_residual(mtop, stop)),
                            IDENTITY_TOL,
                        );
                    } else {
                        let reg = dec - stop;
                        let bound = dropped + 2.0 * (dropped * reg.max(0.0)).sqrt();
                        let slack = 1e-9 * full.abs().max(1.0);
                        report.push(
                            row(
                                "full_vs_decomposed_bound",
                                full,
                                dec,
                                (full - dec).abs() / (bound + slack),
                            ),
                            1.0,
                        );
                        report.push(
                            row("uda_vs_combined_bound", uda, comb, (uda - comb).abs() / (bound + slack)),
                            1.0,
                        );
                        report.push(
                            row(
                                "matrix_top_minus_dropped",
                                mtop - dropped,
                                stop,
                                relative_residual(mtop - dropped, stop),
                            ),
                            IDENTITY_TOL,
                        );
                    }
                }
                if exact {
                    let tail = p.alignment_tail().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    report.push(
                        ResidualRow {
                            check: "alignment_tail",
                            n,
                            d,
                            seed,
                            trial: 0,
                            lhs: tail,
                            rhs: 0.0,
                            residual: tail,
                        },
                        ALIGNMENT_TOL,
                    );
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights() {
        let p = gen_synthetic(12, 5, 2, 2, 0.0, 1).unwrap();
        let w = vec![0.0; 5];
        let full = linear_objective(&p, &w, 2, ObjectiveForm::Full).unwrap();
        assert!((full - sq_norm(&p.y)).abs() <= 1e-12 * full);
        assert_eq!(linear_objective(&p, &w, 2, ObjectiveForm::MatrixBottom).unwrap(), 0.0);
    }

    #[test]
    fn unknown_form_rejected() {
        assert!("bogus".parse::<ObjectiveForm>().is_err());
        for f in ObjectiveForm::ALL {
            assert_eq!(f.name().parse::<ObjectiveForm>().unwrap(), f);
        }
    }

    #[test]
    fn rank_bounds_rejected() {
        assert!(gen_synthetic(10, 4, 0, 1, 0.0, 0).is_err());
        assert!(gen_synthetic(10, 4, 5, 1, 0.0, 0).is_err());
        assert!(gen_synthetic(3, 4, 1, 1, 0.0, 0).is_err());
        assert!(gen_synthetic(10, 4, 1, 1, -1.0, 0).is_err());
    }

    #[test]
    fn same_seed_same_problem() {
        let a = gen_synthetic(20, 6, 3, 2, 0.1, 9).unwrap();
        let b = gen_synthetic(20, 6, 3, 2, 0.1, 9).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.y, b.y);
        assert_eq!(a.phi_tilde, b.phi_tilde);
    }

    #[test]
    fn single_rank_alignment() {
        let p = gen_synthetic(15, 5, 1, 1, 0.0, 2).unwrap();
        assert!(p.y_u()[0].abs() > 1e-3);
        assert!(p.alignment_tail().iter().all(|v| v.abs() <= ALIGNMENT_TOL));
    }

    #[test]
    fn full_rank_alignment_has_no_perpendicular_part() {
        let p = gen_synthetic(15, 5, 5, 5, 0.0, 3).unwrap();
        assert!(p.alignment_tail().is_empty());
        assert!(p.dropped_mass(5) <= 1e-20);
    }

    #[test]
    fn bad_step_size_rejected() {
        let p = gen_synthetic(10, 3, 1, 1, 0.0, 0).unwrap();
        assert!(solve_linear_uda(&p, 1, 0.0, 10).is_err());
    }

    #[test]
    fn huge_step_diverges() {
        let p = gen_synthetic(10, 3, 1, 1, 0.0, 0).unwrap();
        match solve_linear_uda(&p, 1, 10.0, 10_000) {
            Err(Error::Diverged { step_size, .. }) => assert_eq!(step_size, 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn small_lab_passes_with_and_without_noise() {
        for noise in [0.0, 0.1] {
            let cfg = LabConfig {
                ns: vec![20],
                ds: vec![6],
                k_star: 2,
                noise,
                seeds: 3,
                trials: 20,
                ..LabConfig::default()
            };
            let report = run_lab(&cfg).unwrap();
            assert!(!report.checks.is_empty());
            for c in &report.checks {
                assert!(c.passed, "noise {noise}: {c:?}");
            }
        }
    }

    #[test]
    fn lab_rejects_wide_problems() {
        let cfg = LabConfig {
            ns: vec![8],
            ds: vec![16],
            ..LabConfig::default()
        };
        assert!(run_lab(&cfg).is_err());
    }
}
