use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dla_core::data::ImageDataset;
use dla_core::dla::{self, check_parameters, current_k, Checkpoint, MetricsRecord, TrainData};
use dla_core::linear_lab::{run_lab, LabConfig, LabReport};
use log::info;
use serde_json::json;

use crate::config::{content_hash, RunConfig};
use crate::datasets;
use crate::metrics::{read_metrics, MetricsWriter};
use crate::plot::render_svg;
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Config echo that can be fed back to `train`.
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const RESIDUALS_FILE: &str = "residuals.csv";

pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub final_k: f64,
    pub test_acc: Option<f64>,
    pub seconds: f64,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

fn manifest(cfg: &RunConfig, toml: &str, status: &str, results: serde_json::Value) -> Result<Vec<u8>, CliError> {
    let value = json!({
        "config": cfg,
        "config_toml": toml,
        "config_hash": content_hash(toml.as_bytes()),
        "seed": cfg.train.seed,
        "gradient_mode": cfg.train.gradient_mode.to_string(),
        "mode": cfg.train.mode.to_string(),
        "steps": cfg.train.steps,
        "status": status,
        "results": results,
    });
    let mut out = serde_json::to_vec_pretty(&value).map_err(CliError::runtime)?;
    out.push(b'\n');
    Ok(out)
}

/// Applies overrides, checks inputs, trains and writes the run directory.
pub fn train(mut cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<TrainSummary, CliError> {
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.check_inputs()?;
    let started = Instant::now();
    let data = datasets::load(&cfg.data, cfg.model.height)?;
    info!(
        "source {} images, target {}, validation {}",
        data.source.len(),
        data.target.as_ref().map_or(0, |t| t.len()),
        data.val.as_ref().map_or(0, |v| v.len())
    );

    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
    let toml = cfg.to_toml();
    write_file(&dir.join(CONFIG_ECHO_FILE), toml.as_bytes())?;
    write_file(
        &dir.join(MANIFEST_FILE),
        &manifest(&cfg, &toml, "running", json!(null))?,
    )?;

    let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE), cfg.output.metrics_every)?;
    let mut sink_error = None;
    let every = cfg.output.checkpoint_every;
    let outcome = dla::train(
        &cfg.train,
        &cfg.model,
        TrainData {
            source: &data.source,
            target: data.target.as_ref(),
            val: data.val.as_ref(),
        },
        &mut |r, params| {
            let res = writer.push(r).and_then(|_| {
                if every > 0 && r.step % every == 0 && r.step < cfg.train.steps {
                    let ck = Checkpoint::new(&cfg, params.clone())?;
                    ck.save(&dir.join(format!("checkpoint-{:06}.bin", r.step)))?;
                }
                if let Some(v) = r.val_acc {
                    info!("step {} cls {:.4} k {:.4} val_acc {:.4}", r.step, r.cls, r.k, v);
                }
                Ok(())
            });
            res.map_err(|e| {
                let msg = e.to_string();
                sink_error = Some(e);
                dla_core::Error::InvalidArgument(msg)
            })
        },
    );
    writer.flush()?;
    let outcome = match (outcome, sink_error) {
        (_, Some(e)) => return Err(e),
        (Ok(o), None) => o,
        (Err(e), None) => return Err(CliError::runtime(e)),
    };

    Checkpoint::new(&cfg, outcome.params.clone())?.save(&dir.join(CHECKPOINT_FILE))?;
    let test_acc = match &data.target_test {
        Some(t) => Some(dla::evaluate(&outcome.params, &cfg.model, t, cfg.train.standardize)?),
        None => None,
    };
    let final_k = current_k(&outcome.params)?;
    let last_val = outcome.metrics.iter().rev().find_map(|r| r.val_acc);
    let seconds = started.elapsed().as_secs_f64();
    let results = json!({
        "final_k": final_k,
        "final_val_acc": last_val,
        "target_test_acc": test_acc,
        "rows": outcome.metrics.len(),
    });
    write_file(&dir.join(MANIFEST_FILE), &manifest(&cfg, &toml, "completed", results)?)?;
    Ok(TrainSummary {
        out_dir: dir,
        metrics: outcome.metrics,
        final_k,
        test_acc,
        seconds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSet {
    TargetTest,
    TargetVal,
    SourceTest,
    SourceTrain,
}

/// Accuracy in `[0, 1]` of a checkpoint on one split. The model declared by
/// `declared` (default: the one embedded in the checkpoint) must match the
/// stored parameters.
pub fn eval(checkpoint: &Path, declared: Option<&RunConfig>, set: EvalSet) -> Result<f64, CliError> {
    let ck = Checkpoint::load(checkpoint).map_err(CliError::runtime)?;
    let embedded: RunConfig = ck.config().map_err(CliError::runtime)?;
    let cfg = declared.unwrap_or(&embedded);
    check_parameters(&cfg.model, &ck.params)
        .map_err(|e| CliError::Validation(format!("checkpoint does not match the declared model: {e}")))?;
    let side = cfg.model.height;
    let ds: ImageDataset = match set {
        EvalSet::SourceTrain => datasets::load_source(&cfg.data, side)?,
        EvalSet::SourceTest => datasets::load_source_test(&cfg.data, side)?,
        EvalSet::TargetTest | EvalSet::TargetVal => {
            let t = datasets::load_target(&cfg.data, side)?
                .ok_or_else(|| CliError::Validation("config has no target dataset".into()))?;
            if set == EvalSet::TargetTest {
                t.test
            } else {
                t.val
            }
        }
    };
    Ok(dla::evaluate(&ck.params, &cfg.model, &ds, cfg.train.standardize)?)
}

/// Runs the identity suite, prints the residual table to `w` and writes the
/// per-trial residuals under `out`. Fails when any check is violated.
pub fn linear_lab(cfg: &LabConfig, out: Option<&Path>, w: &mut dyn Write) -> Result<LabReport, CliError> {
    cfg.validate()?;
    let report = run_lab(cfg).map_err(CliError::runtime)?;
    let text = format_lab(cfg, &report);
    w.write_all(text.as_bytes()).map_err(CliError::runtime)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join(RESIDUALS_FILE);
        let mut csv = csv::Writer::from_path(&path).map_err(CliError::runtime)?;
        csv.write_record(["check", "n", "d", "seed", "trial", "lhs", "rhs", "residual"])
            .map_err(CliError::runtime)?;
        for r in &report.rows {
            csv.write_record([
                r.check.to_string(),
                r.n.to_string(),
                r.d.to_string(),
                r.seed.to_string(),
                r.trial.to_string(),
                r.lhs.to_string(),
                r.rhs.to_string(),
                r.residual.to_string(),
            ])
            .map_err(CliError::runtime)?;
        }
        csv.flush().map_err(CliError::runtime)?;
    }
    if report.passed() {
        Ok(report)
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} (worst {:.3e} > {:.0e})", c.check, c.worst, c.tolerance))
            .collect();
        Err(CliError::Runtime(format!("identity violated: {}", failed.join("; "))))
    }
}

const MAX_VIOLATIONS: usize = 20;

fn format_lab(cfg: &LabConfig, report: &LabReport) -> String {
    let mut s = String::new();
    let mode = if cfg.noise == 0.0 { "exact" } else { "bounded" };
    let _ = writeln!(
        s,
        "linear lab: n={:?} d={:?} k*={} noise={} seeds={} trials={} ({mode})",
        cfg.ns, cfg.ds, cfg.k_star, cfg.noise, cfg.seeds, cfg.trials
    );
    let _ = writeln!(
        s,
        "{:<28} {:>4} {:>4} {:>12} {:>9}  status",
        "check", "n", "d", "worst", "tol"
    );
    for c in &report.checks {
        for &n in &cfg.ns {
            for &d in &cfg.ds {
                let worst = report
                    .rows
                    .iter()
                    .filter(|r| r.check == c.check && r.n == n && r.d == d)
                    .map(|r| r.residual)
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                if let Some(worst) = worst {
                    let status = if worst <= c.tolerance { "PASS" } else { "FAIL" };
                    let _ = writeln!(
                        s,
                        "{:<28} {n:>4} {d:>4} {worst:>12.3e} {:>9.0e}  {status}",
                        c.check, c.tolerance
                    );
                }
            }
        }
    }
    let violations: Vec<_> = report
        .rows
        .iter()
        .filter(|r| {
            let tol = report
                .checks
                .iter()
                .find(|c| c.check == r.check)
                .map_or(0.0, |c| c.tolerance);
            r.residual > tol
        })
        .collect();
    for r in violations.iter().take(MAX_VIOLATIONS) {
        let _ = writeln!(
            s,
            "violation {} n={} d={} seed={} trial={}: lhs {:e} rhs {:e} residual {:.3e}",
            r.check, r.n, r.d, r.seed, r.trial, r.lhs, r.rhs, r.residual
        );
    }
    if violations.len() > MAX_VIOLATIONS {
        let _ = writeln!(s, "... {} more violations", violations.len() - MAX_VIOLATIONS);
    }
    let _ = writeln!(s, "{}", if report.passed() { "all checks passed" } else { "FAILED" });
    s
}

pub fn plot(metrics: &Path, out: &Path) -> Result<(), CliError> {
    let rows = read_metrics(metrics)?;
    write_file(out, render_svg(&rows).as_bytes())
}
