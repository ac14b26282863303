//! The label-alignment objective and its training loop.
//!
//! Source features are filtered through the top of their spectrum before
//! classification; target features are filtered through the bottom and the
//! classifier's output on them is pushed toward zero. The cutoff `k` is
//! learned jointly with the network.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{build_model, check_parameters, features, head, ConvSpec, InitScheme, ModelSpec, KHAT};
pub use train::{current_k, evaluate, train, MetricsRecord, TrainData, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{gate_weights_var, spectral_filter, GradientMode, Side};
use crate::tensor::{sigmoid, Graph, OptimizerKind, ParameterSet, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Full objective with the target alignment term.
    Dla,
    /// Source-only classification of unfiltered features.
    NoAdapt,
    /// Filtered source classification plus the rank penalty, no target.
    PartialLa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignTarget {
    Probabilities,
    Logits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsLoss {
    CrossEntropy,
    /// Mean over rows of `‖softmax(z) − onehot(y)‖²`.
    SquaredError,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Dla => "dla",
            TrainMode::NoAdapt => "no_adapt",
            TrainMode::PartialLa => "partial_la",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub gradient_mode: GradientMode,
    pub align_target: AlignTarget,
    pub cls_loss: ClsLoss,
    pub optimizer: OptimizerKind,
    /// Validation cadence in steps; 0 disables validation.
    pub val_every: usize,
    /// Per-dataset pixel standardization at batch time.
    pub standardize: bool,
    /// Forces every gate weight to 1 while keeping `k` in the rank penalty.
    pub saturate_gate: bool,
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            gamma: 1e-3,
            beta: 5.0,
            lr: 1e-3,
            batch_size: 128,
            steps: 2100,
            seed: 0,
            mode: TrainMode::Dla,
            gradient_mode: GradientMode::Projected,
            align_target: AlignTarget::Probabilities,
            cls_loss: ClsLoss::CrossEntropy,
            optimizer: OptimizerKind::Adam,
            val_every: 50,
            standardize: false,
            saturate_gate: false,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 6] = [
            (
                self.lambda >= 0.0 && self.lambda.is_finite(),
                "lambda must be finite and >= 0",
            ),
            (
                self.gamma >= 0.0 && self.gamma.is_finite(),
                "gamma must be finite and >= 0",
            ),
            (self.beta > 0.0 && self.beta.is_finite(), "beta must be finite and > 0"),
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be finite and > 0"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.steps >= 1, "steps must be >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }

    /// Parameters the optimizer updates. `khat` never enters the graph
    /// without adaptation, so it is left out there.
    pub fn trainable<'a>(&self, params: &'a ParameterSet<f32>) -> Vec<&'a str> {
        params
            .names()
            .filter(|n| self.mode != TrainMode::NoAdapt || *n != KHAT)
            .collect()
    }
}

/// Unweighted loss terms; `total = cls + λ·align + γ·k_reg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DlaLossParts {
    pub cls: f64,
    pub align: f64,
    pub k_reg: f64,
    pub total: f64,
    pub k: f64,
}

impl DlaLossParts {
    pub fn is_finite(&self) -> bool {
        [self.cls, self.align, self.k_reg, self.total, self.k]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub struct LossOutput<T> {
    pub total: Var,
    pub parts: DlaLossParts,
    /// Class scores on the (filtered) source batch.
    pub source_scores: Tensor<T>,
}

fn gate<T: Scalar>(g: &mut Graph<T>, khat: Var, cfg: &TrainConfig, r: usize) -> Result<Var> {
    if cfg.saturate_gate {
        Ok(g.constant(Tensor::ones([r])))
    } else {
        gate_weights_var(g, khat, cfg.beta, r)
    }
}

fn mean_rows<T: Scalar>(g: &mut Graph<T>, sum: Var, rows: usize) -> Var {
    g.scale(sum, T::from_f64(1.0 / rows as f64))
}

/// Builds the objective on a source batch `(x, y)` and an optional target
/// batch `x_tilde` (required in `dla` mode, ignored otherwise).
pub fn dla_loss<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    x: Tensor<T>,
    y: &[usize],
    x_tilde: Option<Tensor<T>>,
) -> Result<LossOutput<T>> {
    let n = x.shape().first().copied().unwrap_or(0);
    if n == 0 || y.len() != n {
        return Err(Error::invalid(format!(
            "source batch has {n} images and {} labels",
            y.len()
        )));
    }
    let x_tilde = match (cfg.mode, x_tilde) {
        (TrainMode::Dla, None) => return Err(Error::invalid("dla mode needs a target batch")),
        (TrainMode::Dla, Some(t)) => {
            if t.shape().len() != x.shape().len() || t.shape()[1..] != x.shape()[1..] || t.shape()[0] == 0 {
                return Err(Error::ShapeMismatch {
                    op: "dla_loss",
                    lhs: x.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            Some(t)
        }
        _ => None,
    };

    let xv = g.constant(x);
    let phi = features(g, params, spec, xv)?;
    let d = g.shape(phi)[1];

    let khat_value = params.value(KHAT)?.item().as_f64();
    let k_value = sigmoid(khat_value);
    if cfg.mode == TrainMode::NoAdapt {
        let scores = head(g, params, spec, phi)?;
        let cls = classification(g, cfg, scores, y)?;
        let cls_value = g.value(cls).item().as_f64();
        return Ok(LossOutput {
            total: cls,
            parts: DlaLossParts {
                cls: cls_value,
                align: 0.0,
                k_reg: 0.0,
                total: cls_value,
                k: k_value,
            },
            source_scores: g.value(scores).clone(),
        });
    }

    let khat = g.param(params, KHAT)?;
    let w = gate(g, khat, cfg, n.min(d))?;
    let phi_top = spectral_filter(g, phi, w, Side::Top, cfg.gradient_mode)?;
    let scores = head(g, params, spec, phi_top)?;
    let cls = classification(g, cfg, scores, y)?;

    let k = g.sigmoid(khat);
    let k_reg = g.mul(k, k)?;
    let weighted_k = g.scale(k_reg, T::from_f64(cfg.gamma));
    let mut total = g.add(cls, weighted_k)?;

    let mut align_value = 0.0;
    if let Some(xt) = x_tilde {
        let nt = xt.shape()[0];
        let xtv = g.constant(xt);
        let phi_t = features(g, params, spec, xtv)?;
        let wt = if nt == n { w } else { gate(g, khat, cfg, nt.min(d))? };
        let phi_bottom = spectral_filter(g, phi_t, wt, Side::Bottom, cfg.gradient_mode)?;
        let mut out = head(g, params, spec, phi_bottom)?;
        if cfg.align_target == AlignTarget::Probabilities {
            out = g.softmax(out)?;
        }
        let sq = g.sum_squares(out);
        let align = mean_rows(g, sq, nt);
        align_value = g.value(align).item().as_f64();
        let weighted = g.scale(align, T::from_f64(cfg.lambda));
        total = g.add(total, weighted)?;
    }

    let cls_value = g.value(cls).item().as_f64();
    let k_reg_value = g.value(k_reg).item().as_f64();
    Ok(LossOutput {
        total,
        parts: DlaLossParts {
            cls: cls_value,
            align: align_value,
            k_reg: k_reg_value,
            total: g.value(total).item().as_f64(),
            k: g.value(k).item().as_f64(),
        },
        source_scores: g.value(scores).clone(),
    })
}

fn classification<T: Scalar>(g: &mut Graph<T>, cfg: &TrainConfig, scores: Var, y: &[usize]) -> Result<Var> {
    match cfg.cls_loss {
        ClsLoss::CrossEntropy => Ok(g.softmax_cross_entropy(scores, y)?.0),
        ClsLoss::SquaredError => {
            let (n, m) = g.value(scores).dims2()?;
            if let Some(&bad) = y.iter().find(|&&l| l >= m) {
                return Err(Error::invalid(format!("label {bad} outside [0, {m})")));
            }
            let onehot = Tensor::from_fn([n, m], |i| if y[i / m] == i % m { T::one() } else { T::zero() });
            let probs = g.softmax(scores)?;
            let se = g.squared_error(probs, onehot)?;
            Ok(mean_rows(g, se, n))
        }
    }
}

/// Index of the largest score per row, first on ties.
pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, m) = scores.dims2()?;
    Ok(scores
        .data()
        .chunks(m)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_digits;

    fn batch(side: usize, count: usize, seed: u64, shifted: bool) -> (Tensor<f64>, Vec<usize>) {
        let ds = synthetic_digits(count, side, seed, shifted).unwrap();
        let idx: Vec<usize> = (0..count).collect();
        (ds.gather(&idx).cast(), ds.gather_labels(&idx).unwrap())
    }

    #[test]
    fn parts_add_up() {
        let spec = ModelSpec::toy(8, 6);
        let params: ParameterSet<f64> = build_model(&spec, 1).unwrap();
        let (x, y) = batch(8, 12, 0, false);
        let (xt, _) = batch(8, 12, 1, true);
        let cfg = TrainConfig {
            lambda: 0.7,
            gamma: 0.3,
            ..TrainConfig::default()
        };
        let mut g = Graph::new();
        let out = dla_loss(&mut g, &params, &spec, &cfg, x, &y, Some(xt)).unwrap();
        let p = out.parts;
        let expect = p.cls + 0.7 * p.align + 0.3 * p.k_reg;
        assert!((p.total - expect).abs() <= 1e-6 * expect.abs());
        assert!(p.cls >= 0.0 && p.align >= 0.0 && p.k_reg >= 0.0);
        assert!(p.k > 0.0 && p.k < 1.0);
        assert!((p.k_reg - p.k * p.k).abs() < 1e-12);
        // Probability rows have squared norm at least 1/m.
        assert!(p.align >= 0.1 - 1e-12);
    }

    #[test]
    fn no_adapt_is_plain_classification() {
        let spec = ModelSpec::toy(8, 6);
        let params: ParameterSet<f64> = build_model(&spec, 2).unwrap();
        let (x, y) = batch(8, 10, 0, false);
        let cfg = TrainConfig {
            mode: TrainMode::NoAdapt,
            ..TrainConfig::default()
        };
        let mut g = Graph::new();
        let out = dla_loss(&mut g, &params, &spec, &cfg, x.clone(), &y, None).unwrap();

        let mut g2 = Graph::new();
        let xv = g2.constant(x);
        let phi = features(&mut g2, &params, &spec, xv).unwrap();
        let z = head(&mut g2, &params, &spec, phi).unwrap();
        let (ce, _) = g2.softmax_cross_entropy(z, &y).unwrap();
        assert_eq!(out.parts.total, g2.value(ce).item());
        assert_eq!(out.parts.align, 0.0);
    }

    #[test]
    fn dla_needs_matching_target() {
        let spec = ModelSpec::toy(8, 6);
        let params: ParameterSet<f64> = build_model(&spec, 0).unwrap();
        let (x, y) = batch(8, 4, 0, false);
        let cfg = TrainConfig::default();
        let mut g = Graph::new();
        assert!(dla_loss(&mut g, &params, &spec, &cfg, x.clone(), &y, None).is_err());
        let wrong = Tensor::zeros([4, 1, 9, 9]);
        assert!(dla_loss(&mut g, &params, &spec, &cfg, x, &y, Some(wrong)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
            TrainConfig {
                gamma: f64::NAN,
                ..Default::default()
            },
            TrainConfig {
                beta: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 1,
                ..Default::default()
            },
            TrainConfig {
                steps: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn argmax_first_on_ties() {
        let t = Tensor::from_rows(&[vec![1.0, 3.0, 3.0], vec![2.0, 0.0, -1.0]]).unwrap();
        assert_eq!(argmax_rows::<f64>(&t).unwrap(), vec![1, 0]);
    }
}
