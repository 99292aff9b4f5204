//! Declarative experiment description, stored as TOML.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::{NoiseMode, NoisyActConfig, PSharing};
use crate::error::{Error, Result};
use crate::nn::RecurrentInit;
use crate::training::{AnnealSchedule, CurriculumPhase, OptimizerConfig, OptimizerKind, TrainLoopConfig};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "NOISYACT_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GaussianMixture,
    DigitsMlp,
    UniqueCount,
    AnnealDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::GaussianMixture,
        ExperimentKind::DigitsMlp,
        ExperimentKind::UniqueCount,
        ExperimentKind::AnnealDemo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::GaussianMixture => "gaussian-mixture",
            ExperimentKind::DigitsMlp => "digits-mlp",
            ExperimentKind::UniqueCount => "unique-count",
            ExperimentKind::AnnealDemo => "anneal-demo",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::parse("experiment", format!("unknown experiment {s:?}")))
    }
}

/// Hidden-unit nonlinearity. The hard kinds take the noise settings; the
/// soft kinds and ReLU are deterministic only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    HardTanh,
    HardSigmoid,
    Tanh,
    Sigmoid,
    Relu,
}

impl ActivationKind {
    pub fn is_hard(self) -> bool {
        matches!(self, ActivationKind::HardTanh | ActivationKind::HardSigmoid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Lstm,
    Gru,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// MLP hidden units, or the recurrent cell's hidden state width.
    pub hidden: usize,
    /// Number of hidden layers of an MLP.
    pub layers: usize,
    pub activation: ActivationKind,
    pub cell: CellKind,
    /// Token embedding width; absent means one-hot inputs.
    pub embed: Option<usize>,
    pub head_hidden: usize,
    /// Gain of the fan-in uniform init of feed-forward weights.
    pub init_gain: f64,
    pub recurrent_init: RecurrentInit,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 1,
            activation: ActivationKind::HardTanh,
            cell: CellKind::Lstm,
            embed: None,
            head_hidden: 32,
            init_gain: 1.0,
            recurrent_init: RecurrentInit::default(),
            forget_bias: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub alpha: f64,
    pub c: f64,
    pub sigma_fixed: f64,
    pub p_sharing: PSharing,
    /// `p` is drawn uniformly from this range.
    pub p_init: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let d = NoisyActConfig::default();
        Self {
            mode: d.mode,
            alpha: d.alpha,
            c: d.c,
            sigma_fixed: d.sigma_fixed,
            p_sharing: d.p_sharing,
            p_init: [-1.0, 1.0],
        }
    }
}

impl NoiseConfig {
    /// Activation settings for a site with the given hard function.
    pub fn site(&self, base: crate::activations::HardSatKind) -> NoisyActConfig {
        NoisyActConfig {
            base,
            mode: self.mode,
            alpha: self.alpha,
            c: self.c,
            sigma_fixed: self.sigma_fixed,
            p_sharing: self.p_sharing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub enabled: bool,
    pub c0: f64,
    pub floor: f64,
    pub period: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = AnnealSchedule::default();
        Self {
            enabled: false,
            c0: s.c0,
            floor: s.floor,
            period: s.period,
        }
    }
}

impl ScheduleConfig {
    pub fn schedule(&self) -> Option<AnnealSchedule> {
        self.enabled.then_some(AnnealSchedule {
            c0: self.c0,
            floor: self.floor,
            period: self.period,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Global-norm clipping threshold; 0 disables clipping.
    pub clip: f64,
    pub eval_every: usize,
    pub curriculum: Vec<CurriculumPhase>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            clip: 5.0,
            eval_every: 1,
            curriculum: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn loop_config(&self, seed: u64) -> TrainLoopConfig {
        TrainLoopConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            clip: (self.clip > 0.0).then_some(self.clip),
            seed,
            eval_every: self.eval_every,
            curriculum: (!self.curriculum.is_empty()).then(|| self.curriculum.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training examples (per class for the Gaussian mixture).
    pub n_train: usize,
    /// Evaluation examples (per class for the Gaussian mixture; held-out
    /// images for digits).
    pub n_eval: usize,
    pub dim: usize,
    pub length: usize,
    pub values: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 300,
            n_eval: 200,
            dim: 2,
            length: 10,
            values: 6,
        }
    }
}

/// Noisy 1-D descent `x <- x - lr·(f'(x) + c_t·ξ)` on `0.1x² + sin(3x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub starts: usize,
    pub steps: u64,
    pub lr: f64,
    pub c0: f64,
    pub floor: f64,
    pub period: u64,
    pub start_range: [f64; 2],
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            starts: 100,
            steps: 200_000,
            lr: 0.02,
            c0: 8.0,
            floor: 0.0,
            period: 4000,
            start_range: [-6.0, 6.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the seed sweep; 0 uses all cores.
    pub threads: usize,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub demo: DemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(ExperimentKind::GaussianMixture)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: None,
            threads: 0,
            model: ModelConfig::default(),
            noise: NoiseConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            demo: DemoConfig::default(),
        };
        match kind {
            ExperimentKind::GaussianMixture => Self {
                model: ModelConfig {
                    hidden: 8,
                    layers: 3,
                    ..base.model
                },
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::RmsProp,
                    lr: 3e-3,
                    ..base.optimizer
                },
                train: TrainConfig {
                    epochs: 200,
                    batch_size: 32,
                    ..base.train
                },
                data: DataConfig {
                    n_train: 300,
                    n_eval: 200,
                    ..base.data
                },
                ..base
            },
            ExperimentKind::DigitsMlp => Self {
                model: ModelConfig {
                    hidden: 64,
                    layers: 1,
                    init_gain: 2.0,
                    ..base.model
                },
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::RmsProp,
                    lr: 1e-3,
                    ..base.optimizer
                },
                train: TrainConfig {
                    epochs: 50,
                    batch_size: 32,
                    ..base.train
                },
                data: DataConfig {
                    n_eval: 297,
                    ..base.data
                },
                ..base
            },
            ExperimentKind::UniqueCount => Self {
                model: ModelConfig {
                    hidden: 32,
                    cell: CellKind::Lstm,
                    head_hidden: 32,
                    ..base.model
                },
                noise: NoiseConfig {
                    mode: NoiseMode::Nan,
                    ..base.noise
                },
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::RmsProp,
                    lr: 2e-3,
                    ..base.optimizer
                },
                train: TrainConfig {
                    epochs: 30,
                    batch_size: 32,
                    ..base.train
                },
                data: DataConfig {
                    n_train: 4000,
                    n_eval: 1000,
                    length: 10,
                    values: 6,
                    ..base.data
                },
                // Runs here are a few thousand minibatches long, so c has to
                // decay on a much shorter period to reach the floor.
                schedule: ScheduleConfig {
                    period: 5,
                    ..base.schedule
                },
                ..base
            },
            ExperimentKind::AnnealDemo => base,
        }
    }

    /// Parses a config document. Keys absent from the document take the
    /// preset values of its `experiment` (gaussian-mixture when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn fmt::Display| Error::parse("config", e.to_string());
        let doc: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let kind = match doc.get("experiment") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(err(&format_args!("experiment must be a string, got {other}"))),
            None => ExperimentKind::GaussianMixture,
        };
        let mut merged = toml::Table::try_from(Self::preset(kind)).map_err(|e| err(&e))?;
        merge(&mut merged, doc);
        toml::Value::Table(merged).try_into().map_err(|e| err(&e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Output directory: the configured one, else `$NOISYACT_OUT/<experiment>`,
    /// else `runs/<experiment>`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(self.experiment.as_str())
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds must be distinct: {:?}", self.seeds)));
        }
        if self.experiment == ExperimentKind::AnnealDemo {
            let d = &self.demo;
            let ok = d.starts > 0
                && d.lr > 0.0
                && d.c0 >= 0.0
                && d.floor >= 0.0
                && d.period > 0
                && d.start_range[0] < d.start_range[1];
            if !ok {
                return Err(Error::Config(format!("invalid demo settings {d:?}")));
            }
            return Ok(());
        }
        self.noise.site(crate::activations::HardSatKind::HardTanh).validate()?;
        if !(self.noise.p_init[0] <= self.noise.p_init[1]) {
            return Err(Error::Config(format!("p_init range {:?} is empty", self.noise.p_init)));
        }
        self.optimizer.validate()?;
        if let Some(s) = self.schedule.schedule() {
            s.validate()?;
        }
        self.train.loop_config(0).validate()?;
        let m = &self.model;
        if m.hidden == 0 || m.head_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        let uses_activation = matches!(
            self.experiment,
            ExperimentKind::GaussianMixture | ExperimentKind::DigitsMlp
        );
        if uses_activation && !m.activation.is_hard() && self.noise.mode != NoiseMode::Deterministic {
            return Err(Error::Config(format!(
                "activation {:?} has no noisy form; use mode = \"det\"",
                m.activation
            )));
        }
        let d = &self.data;
        match self.experiment {
            ExperimentKind::GaussianMixture if d.n_train == 0 || d.n_eval == 0 || d.dim < 2 => {
                Err(Error::Config("gaussian-mixture needs n_train, n_eval >= 1 and dim >= 2".into()))
            }
            ExperimentKind::UniqueCount if d.n_train == 0 || d.n_eval == 0 || d.length == 0 || d.values == 0 => {
                Err(Error::Config("unique-count needs n_train, n_eval, length, values >= 1".into()))
            }
            ExperimentKind::DigitsMlp if d.n_eval == 0 || d.n_eval >= 1797 => {
                Err(Error::Config("digits n_eval must be in 1..1797".into()))
            }
            ExperimentKind::GaussianMixture | ExperimentKind::DigitsMlp if m.layers == 0 => {
                Err(Error::Config("an MLP needs at least one hidden layer".into()))
            }
            _ => Ok(()),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "experiment = \"unique-count\"\nseeds = [7]\n[noise]\nmode = \"nanil\"\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::UniqueCount);
        assert_eq!(cfg.noise.mode, NoiseMode::Nanil);
        assert_eq!(cfg.noise.c, 0.5);
        assert_eq!(cfg.noise.sigma_fixed, 0.05);
        assert_eq!(cfg.model.hidden, 32);
        assert_eq!(cfg.data.n_train, 4000);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::GaussianMixture);
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::preset(ExperimentKind::DigitsMlp);
        cfg.model.activation = ActivationKind::Tanh;
        assert!(cfg.validate().is_err());
        cfg.noise.mode = NoiseMode::Deterministic;
        assert!(cfg.validate().is_ok());

        assert!(ExperimentConfig::from_toml("experiment = \"mnist\"").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }
}
