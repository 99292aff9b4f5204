//! Experiment runner: builds data and models from an [`ExperimentConfig`],
//! trains one replica per seed and persists metrics, checkpoints and a
//! median-over-seeds summary.
//!
//! Output layout under the experiment directory:
//!
//! - `config.toml`: the resolved configuration
//! - `metrics_seed<N>.csv`: per-epoch metrics (byte-stable across reruns)
//! - `timing_seed<N>.csv`: wall-clock seconds per evaluation
//! - `best_seed<N>.ckpt`: parameters at the lowest eval NLL
//! - `summary.csv`: row-wise median of the metrics files
//! - `anneal_demo.csv`: basin statistics (anneal-demo only)

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::activations::HardSatKind;
use crate::error::{Error, Result};
use crate::harness::anneal_demo::{run_anneal_demo, BasinStats};
use crate::harness::config::{ActivationKind, CellKind, ExperimentConfig, ExperimentKind};
use crate::harness::data::{digits, gen_gaussian_mixture, gen_unique_count, SyntheticDataset};
use crate::harness::metrics::{median_value, MetricsRecord};
use crate::nn::layers::Activation;
use crate::nn::recurrent::noisy_gates;
use crate::nn::{Architecture, GruCell, LstmCell, Mlp, Network, ParamStore, RecurrentCell, SequenceClassifier};
use crate::rng::RngStream;
use crate::training::{evaluate, train, EvalStats, Optimizer, TrainOutcome};

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xE7A1
}

/// `(train, eval)` sets for one seed.
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let d = &cfg.data;
    match cfg.experiment {
        ExperimentKind::GaussianMixture => Ok((
            gen_gaussian_mixture(seed, d.n_train, d.dim)?,
            gen_gaussian_mixture(eval_seed(seed), d.n_eval, d.dim)?,
        )),
        ExperimentKind::UniqueCount => Ok((
            gen_unique_count(seed, d.n_train, d.length, d.values)?,
            gen_unique_count(eval_seed(seed), d.n_eval, d.length, d.values)?,
        )),
        ExperimentKind::DigitsMlp => digits(seed, d.n_eval),
        ExperimentKind::AnnealDemo => Err(Error::Config("anneal-demo has no dataset".into())),
    }
}

fn hidden_activation(cfg: &ExperimentConfig) -> Activation {
    match cfg.model.activation {
        ActivationKind::HardTanh => Activation::Noisy(cfg.noise.site(HardSatKind::HardTanh)),
        ActivationKind::HardSigmoid => Activation::Noisy(cfg.noise.site(HardSatKind::HardSigmoid)),
        ActivationKind::Tanh => Activation::Tanh,
        ActivationKind::Sigmoid => Activation::Sigmoid,
        ActivationKind::Relu => Activation::Relu,
    }
}

/// Freshly initialized network for `seed`.
pub fn build_network(cfg: &ExperimentConfig, train_set: &SyntheticDataset, seed: u64) -> Result<Network> {
    let m = &cfg.model;
    let mut rng = RngStream::substream(seed, INIT_STREAM);
    let mut params = ParamStore::new();
    let arch = match cfg.experiment {
        ExperimentKind::GaussianMixture | ExperimentKind::DigitsMlp => {
            let input = match &train_set.inputs {
                crate::harness::data::DataInputs::Dense(t) => t.last_dim(),
                _ => return Err(Error::Config("MLP experiments need dense inputs".into())),
            };
            let mut sizes = vec![input];
            sizes.extend(std::iter::repeat_n(m.hidden, m.layers));
            sizes.push(train_set.classes);
            let mlp = Mlp::new("mlp", &sizes, hidden_activation(cfg));
            mlp.init(&mut params, m.init_gain, &mut rng)?;
            Architecture::Mlp(mlp)
        }
        ExperimentKind::UniqueCount => {
            let vocab = cfg.data.values;
            let (gate, cand) = if m.activation.is_hard() {
                noisy_gates(&cfg.noise.site(HardSatKind::HardTanh))
            } else {
                (Activation::Sigmoid, Activation::Tanh)
            };
            let input = m.embed.unwrap_or(vocab);
            let cell = match m.cell {
                CellKind::Lstm => RecurrentCell::Lstm(LstmCell::new("lstm", input, m.hidden, gate, cand)),
                CellKind::Gru => RecurrentCell::Gru(GruCell::new("gru", input, m.hidden, gate, cand)),
            };
            let model = SequenceClassifier::new(vocab, m.embed, cell, m.head_hidden, train_set.classes);
            model.init(&mut params, m.recurrent_init, m.forget_bias, &mut rng)?;
            Architecture::Sequence(model)
        }
        ExperimentKind::AnnealDemo => return Err(Error::Config("anneal-demo has no network".into())),
    };
    let [lo, hi] = cfg.noise.p_init;
    for (name, t) in params.iter_mut() {
        if name.ends_with(".p") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(lo, hi));
        }
    }
    Ok(Network { arch, params })
}

/// Trains one replica without touching the filesystem.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Network, TrainOutcome)> {
    let (train_set, eval_set) = datasets(cfg, seed)?;
    let mut net = build_network(cfg, &train_set, seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let schedule = cfg.schedule.schedule();
    let mut rng = RngStream::substream(seed, TRAIN_STREAM);
    let outcome = train(
        &mut net,
        &train_set,
        &eval_set,
        &mut optimizer,
        schedule.as_ref(),
        &cfg.train.loop_config(seed),
        &mut rng,
    )?;
    Ok((net, outcome))
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub record: MetricsRecord,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: Vec<SeedResult>,
    /// Row-wise median over seeds.
    pub summary: MetricsRecord,
    /// `(annealed, noiseless)` statistics per seed, anneal-demo only.
    pub demo: Vec<(u64, BasinStats, BasinStats)>,
}

impl ExperimentReport {
    fn final_median(&self, f: impl Fn(&crate::harness::metrics::MetricsRow) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.seeds.iter().filter_map(|s| s.record.last().map(&f)).collect();
        (!v.is_empty()).then(|| median_value(&v))
    }

    pub fn final_median_error_pct(&self) -> Option<f64> {
        self.final_median(|r| r.eval_error_pct)
    }

    pub fn final_median_accuracy(&self) -> Option<f64> {
        self.final_median(|r| r.eval_accuracy)
    }

    pub fn final_median_eval_nll(&self) -> Option<f64> {
        self.final_median(|r| r.eval_nll)
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Validates `cfg`, runs every seed (in parallel) and writes all outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir();
    create_dir(&out_dir)?;
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    let workers = pool(cfg.threads)?;

    if cfg.experiment == ExperimentKind::AnnealDemo {
        let demo: Vec<(u64, BasinStats, BasinStats)> = workers.install(|| {
            cfg.seeds
                .par_iter()
                .map(|&s| (s, run_anneal_demo(&cfg.demo, s, true), run_anneal_demo(&cfg.demo, s, false)))
                .collect()
        });
        let path = out_dir.join("anneal_demo.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "annealed", "runs", "global_hits", "fraction"])?;
        for (seed, a, b) in &demo {
            for s in [a, b] {
                w.write_record([
                    seed.to_string(),
                    s.annealed.to_string(),
                    s.runs.to_string(),
                    s.global_hits.to_string(),
                    s.fraction.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        return Ok(ExperimentReport {
            kind: cfg.experiment,
            out_dir,
            seeds: Vec::new(),
            summary: MetricsRecord::default(),
            demo,
        });
    }

    let results: Vec<Result<(u64, TrainOutcome)>> = workers.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, seed).map(|(_, o)| (seed, o)))
            .collect()
    });
    let mut seeds = Vec::with_capacity(results.len());
    for r in results {
        let (seed, outcome) = r?;
        outcome.record.write_csv(&out_dir.join(format!("metrics_seed{seed}.csv")))?;
        outcome.record.write_timing_csv(&out_dir.join(format!("timing_seed{seed}.csv")))?;
        outcome.best.save(&out_dir.join(format!("best_seed{seed}.ckpt")))?;
        seeds.push(SeedResult {
            seed,
            record: outcome.record,
            best_epoch: outcome.best_epoch,
        });
    }
    let records: Vec<MetricsRecord> = seeds.iter().map(|s| s.record.clone()).collect();
    let summary = MetricsRecord::median_of(&records);
    summary.write_csv(&out_dir.join("summary.csv"))?;
    Ok(ExperimentReport {
        kind: cfg.experiment,
        out_dir,
        seeds,
        summary,
        demo: Vec::new(),
    })
}

/// Evaluates a saved checkpoint on the eval set of `seed`.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, seed: u64, checkpoint: &Path) -> Result<EvalStats> {
    cfg.validate()?;
    let (train_set, eval_set) = datasets(cfg, seed)?;
    let mut net = build_network(cfg, &train_set, seed)?;
    let loaded = ParamStore::load(checkpoint)?;
    for (name, t) in net.params.iter() {
        match loaded.get(name) {
            Some(v) if v.shape() == t.shape() => {}
            _ => {
                return Err(Error::Config(format!(
                    "checkpoint does not match the configured model at {name}"
                )))
            }
        }
    }
    if loaded.len() != net.params.len() {
        return Err(Error::Config("checkpoint has extra parameters".into()));
    }
    net.params = loaded;
    evaluate(&net, &eval_set)
}

/// Reads every `metrics_seed*.csv` in `dir` (sorted by name) and returns the
/// row-wise median.
pub fn summarize_dir(dir: &Path) -> Result<(Vec<PathBuf>, MetricsRecord)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_seed") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no metrics files in {}", dir.display())));
    }
    let records = files
        .iter()
        .map(|p| MetricsRecord::read_csv(p))
        .collect::<Result<Vec<_>>>()?;
    Ok((files, MetricsRecord::median_of(&records)))
}
