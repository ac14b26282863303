use std::time::Instant;

use super::{argmax_rows, build_model, dla_loss, features, head, ModelSpec, TrainConfig, TrainMode, KHAT};
use crate::data::{BatchSampler, ImageDataset, PixelStats};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Graph, Optimizer, ParameterSet};

/// One row of the training log. `align` and `k_reg` hold the weighted
/// terms `λ·align` and `γ·k²`, so `total = cls + align + k_reg`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub total: f64,
    pub cls: f64,
    pub align: f64,
    pub k_reg: f64,
    pub k: f64,
    pub src_acc: f64,
    pub val_acc: Option<f64>,
    pub wall_ms: Option<f64>,
}

pub struct TrainData<'a> {
    pub source: &'a ImageDataset,
    /// Unlabeled target pool; required in `dla` mode.
    pub target: Option<&'a ImageDataset>,
    /// Labeled held-out target split for periodic validation.
    pub val: Option<&'a ImageDataset>,
}

pub struct TrainOutcome {
    pub params: ParameterSet<f32>,
    pub metrics: Vec<MetricsRecord>,
}

const SAMPLER_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const EVAL_CHUNK: usize = 500;

/// Runs `cfg.steps` optimizer steps. `on_step` sees every record together
/// with the updated parameters and may abort the run by returning an error.
pub fn train(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    data: TrainData<'_>,
    on_step: &mut dyn FnMut(&MetricsRecord, &ParameterSet<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let target = match cfg.mode {
        TrainMode::Dla => Some(
            data.target
                .ok_or_else(|| Error::invalid("dla mode needs a target dataset"))?,
        ),
        _ => None,
    };
    let mut params: ParameterSet<f32> = build_model(spec, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &params, cfg.trainable(&params))?;
    let mut sampler = BatchSampler::new(
        cfg.seed ^ SAMPLER_SALT,
        cfg.batch_size,
        data.source.len(),
        target.map(|t| t.len()),
    )?;
    let source_stats = cfg.standardize.then(|| PixelStats::of(data.source));
    let target_stats = target.filter(|_| cfg.standardize).map(PixelStats::of);

    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut graph = Graph::new();
    for step in 1..=cfg.steps {
        let started = Instant::now();
        let batch = sampler.next_batch(data.source, target)?;
        let x = match &source_stats {
            Some(s) => s.apply(&batch.x),
            None => batch.x,
        };
        let xt = match (&target_stats, batch.x_tilde) {
            (Some(s), Some(t)) => Some(s.apply(&t)),
            (_, t) => t,
        };
        let out = dla_loss(&mut graph, &params, spec, cfg, x, &batch.y, xt)?;
        let p = out.parts;
        if !p.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                cls: p.cls,
                align: p.align,
                k_reg: p.k_reg,
                k: p.k,
            });
        }
        let correct = argmax_rows(&out.source_scores)?
            .iter()
            .zip(&batch.y)
            .filter(|(a, b)| a == b)
            .count();
        graph.backward(out.total, &mut params)?;
        opt.step(&mut params)?;

        let val_acc = match data.val {
            Some(v) if cfg.val_every > 0 && (step % cfg.val_every == 0 || step == cfg.steps) => {
                Some(evaluate(&params, spec, v, cfg.standardize)?)
            }
            _ => None,
        };
        let record = MetricsRecord {
            step,
            total: p.total,
            cls: p.cls,
            align: cfg.lambda * p.align,
            k_reg: cfg.gamma * p.k_reg,
            k: p.k,
            src_acc: correct as f64 / batch.y.len() as f64,
            val_acc,
            wall_ms: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        on_step(&record, &params)?;
        metrics.push(record);
    }
    Ok(TrainOutcome { params, metrics })
}

/// Accuracy of `argmax g(f(x))` on unfiltered features.
pub fn evaluate(params: &ParameterSet<f32>, spec: &ModelSpec, ds: &ImageDataset, standardize: bool) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let labels = ds
        .labels()
        .ok_or_else(|| Error::invalid(format!("{} {} set has no labels", ds.provenance, ds.split)))?;
    let stats = standardize.then(|| PixelStats::of(ds));
    let mut correct = 0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut g = Graph::new();
    for chunk in indices.chunks(EVAL_CHUNK) {
        g.clear();
        let mut x = ds.gather(chunk);
        if let Some(s) = &stats {
            x = s.apply(&x);
        }
        let xv = g.constant(x);
        let phi = features(&mut g, params, spec, xv)?;
        let z = head(&mut g, params, spec, phi)?;
        correct += argmax_rows(g.value(z))?
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == labels[i] as usize)
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// `sigmoid(khat)` of a parameter set.
pub fn current_k(params: &ParameterSet<f32>) -> Result<f64> {
    Ok(sigmoid(params.value(KHAT)?.item() as f64))
}
