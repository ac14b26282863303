use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dla_cli::commands::{self, EvalSet};
use dla_cli::config::RunConfig;
use dla_cli::CliError;
use dla_core::linear_lab::LabConfig;

#[derive(Parser)]
#[command(
    name = "dla",
    version,
    about = "Deep label alignment: train, evaluate, linear lab, plot"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config and write metrics, checkpoint and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides `train.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the accuracy of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config declaring the model and data; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "target-test")]
        dataset: EvalSet,
    },
    /// Check the linear-model identities on synthetic aligned problems.
    LinearLab {
        /// Sample counts (repeatable).
        #[arg(long = "n", num_args = 1.., default_values_t = [64])]
        ns: Vec<usize>,
        /// Feature dimensions (repeatable).
        #[arg(long = "d", num_args = 1.., default_values_t = [16])]
        ds: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        k_star: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Random weight vectors per problem.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Directory for the residual CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a metrics CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let cfg = RunConfig::load(&config)?;
            let s = commands::train(cfg, out, seed)?;
            let last = s.metrics.last();
            println!(
                "trained {} steps in {:.1}s: final k {:.4}, last val_acc {}, target test accuracy {}",
                s.metrics.len(),
                s.seconds,
                s.final_k,
                s.metrics
                    .iter()
                    .rev()
                    .find_map(|r| r.val_acc)
                    .map_or("n/a".into(), |v| format!("{:.2}", 100.0 * v)),
                s.test_acc.map_or("n/a".into(), |v| format!("{:.2}", 100.0 * v)),
            );
            if let Some(r) = last {
                println!(
                    "final loss {} (cls {}, align {}, k_reg {})",
                    r.total, r.cls, r.align, r.k_reg
                );
            }
            println!("outputs in {}", s.out_dir.display());
        }
        Command::Eval {
            checkpoint,
            config,
            dataset,
        } => {
            let declared = config.as_deref().map(RunConfig::load).transpose()?;
            let acc = commands::eval(&checkpoint, declared.as_ref(), dataset)?;
            println!("accuracy: {:.2}", 100.0 * acc);
        }
        Command::LinearLab {
            ns,
            ds,
            k_star,
            seeds,
            seed,
            noise,
            trials,
            out,
        } => {
            let cfg = LabConfig {
                ns,
                ds,
                k_star,
                noise,
                seeds,
                first_seed: seed,
                trials,
                ..LabConfig::default()
            };
            commands::linear_lab(&cfg, out.as_deref(), &mut std::io::stdout())?;
        }
        Command::Plot { metrics, out } => commands::plot(&metrics, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                dla_cli::EXIT_VALIDATION as u8
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
