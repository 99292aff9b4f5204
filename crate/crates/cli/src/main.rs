use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use noisyact::harness::experiments::{datasets, evaluate_checkpoint, run_experiment, summarize_dir};
use noisyact::harness::{ExperimentConfig, ExperimentKind, MetricsRecord};
use noisyact::NoiseMode;

#[derive(Parser, Debug)]
#[command(name = "noisyact", version, about = "Noisy activation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the train and eval sets of an experiment as CSV.
    GenData(Common),
    /// Train every configured seed and write metrics, checkpoints and a summary.
    Train(Common),
    /// Evaluate a saved checkpoint on the eval set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load; defaults to `best_seed<N>.ckpt` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare annealed and noiseless descent on the 1-D demo objective.
    AnnealDemo(Common),
    /// Median over the `metrics_seed*.csv` files of a run directory.
    Summarize {
        /// Run directory; defaults to `--out`.
        dir: Option<PathBuf>,
        /// Same as the positional directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Preset to start from when no config file is given.
    #[arg(long, value_name = "KIND")]
    experiment: Option<ExperimentKind>,
    /// Replace the configured seed list (repeatable).
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,
    /// Output directory. Without it, runs go to `$NOISYACT_OUT/<experiment>`
    /// (or `runs/<experiment>`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Noise mode override.
    #[arg(long, value_name = "MODE")]
    mode: Option<NoiseMode>,
}

impl Common {
    fn resolve(&self, default_kind: ExperimentKind) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::preset(self.experiment.unwrap_or(default_kind)),
        };
        if let (Some(kind), Some(_)) = (self.experiment, &self.config) {
            if kind != cfg.experiment {
                bail!("--experiment {kind} conflicts with the config's {}", cfg.experiment);
            }
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(mode) = self.mode {
            cfg.noise.mode = mode;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_record(record: &MetricsRecord) {
    if let Some(last) = record.last() {
        println!(
            "epoch {}  train_nll {:.4}  eval_nll {:.4}  eval_accuracy {:.4}  eval_error_pct {:.2}",
            last.epoch, last.train_nll, last.eval_nll, last.eval_accuracy, last.eval_error_pct
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.resolve(ExperimentKind::GaussianMixture)?;
            if cfg.experiment == ExperimentKind::AnnealDemo {
                bail!("anneal-demo has no dataset");
            }
            let dir = cfg.resolved_out_dir();
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for &seed in &cfg.seeds {
                let (train, eval) = datasets(&cfg, seed)?;
                let train_path = dir.join(format!("train_seed{seed}.csv"));
                let eval_path = dir.join(format!("eval_seed{seed}.csv"));
                train.write_csv(&train_path)?;
                eval.write_csv(&eval_path)?;
                println!("{} ({} rows)", train_path.display(), train.len());
                println!("{} ({} rows)", eval_path.display(), eval.len());
            }
        }
        Command::Train(common) => {
            let cfg = common.resolve(ExperimentKind::GaussianMixture)?;
            if cfg.experiment == ExperimentKind::AnnealDemo {
                bail!("use the anneal-demo subcommand for the anneal-demo experiment");
            }
            let report = run_experiment(&cfg)?;
            for s in &report.seeds {
                print!("seed {}  best epoch {}  ", s.seed, s.best_epoch);
                print_record(&s.record);
            }
            print!("median  ");
            print_record(&report.summary);
            println!("wrote {}", report.out_dir.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve(ExperimentKind::GaussianMixture)?;
            if cfg.experiment == ExperimentKind::AnnealDemo {
                bail!("anneal-demo has no model to evaluate");
            }
            for &seed in &cfg.seeds {
                let path = checkpoint
                    .clone()
                    .unwrap_or_else(|| cfg.resolved_out_dir().join(format!("best_seed{seed}.ckpt")));
                let stats = evaluate_checkpoint(&cfg, seed, &path)?;
                println!(
                    "seed {seed}  eval_nll {:.6}  eval_accuracy {:.4}  eval_error_pct {:.2}",
                    stats.nll,
                    stats.accuracy,
                    100.0 * (1.0 - stats.accuracy)
                );
            }
        }
        Command::AnnealDemo(common) => {
            let mut cfg = common.resolve(ExperimentKind::AnnealDemo)?;
            if cfg.experiment != ExperimentKind::AnnealDemo {
                if common.config.is_some() {
                    bail!("config describes {}, not anneal-demo", cfg.experiment);
                }
                cfg.experiment = ExperimentKind::AnnealDemo;
            }
            let report = run_experiment(&cfg)?;
            for (seed, annealed, plain) in &report.demo {
                println!(
                    "seed {seed}  annealed {}/{} ({:.2})  noiseless {}/{} ({:.2})",
                    annealed.global_hits,
                    annealed.runs,
                    annealed.fraction,
                    plain.global_hits,
                    plain.runs,
                    plain.fraction
                );
            }
            println!("wrote {}", report.out_dir.join("anneal_demo.csv").display());
        }
        Command::Summarize { dir, out } => {
            let dir = match (dir, out) {
                (Some(d), _) | (None, Some(d)) => d,
                (None, None) => bail!("summarize needs a run directory (positional or --out)"),
            };
            let (files, summary) = summarize_dir(&dir)?;
            let out = dir.join("summary.csv");
            summary.write_csv(&out)?;
            println!("median of {} metrics files", files.len());
            print_record(&summary);
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
