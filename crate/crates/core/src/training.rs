//! Optimizers, gradient clipping, noise annealing and the training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activations::NoiseCtx;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::harness::data::SyntheticDataset;
use crate::harness::metrics::{MetricsRecord, MetricsRow};
use crate::nn::{Architecture, Grads, Network, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// L2 norm over every gradient entry.
pub fn global_norm(grads: &Grads) -> f64 {
    grads.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients by `threshold / norm` when the global norm exceeds
/// `threshold`.
pub fn clip_global_norm(mut grads: Grads, threshold: f64) -> Result<Grads> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let norm = global_norm(&grads);
    if norm > threshold {
        let k = threshold / norm;
        grads.values_mut().for_each(|g| g.scale_in_place(k));
    }
    Ok(grads)
}

/// `c(t) = max(floor, c0 / sqrt(t + 1))` where `t` advances once every
/// `period` minibatches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub c0: f64,
    pub floor: f64,
    pub period: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            c0: 30.0,
            floor: 0.5,
            period: 200,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) || !(self.floor >= 0.0) || self.period == 0 {
            return Err(Error::Config(format!("invalid anneal schedule {self:?}")));
        }
        Ok(())
    }

    pub fn value(&self, minibatch_index: u64) -> f64 {
        let t = (minibatch_index / self.period) as f64;
        (self.c0 / (t + 1.0).sqrt()).max(self.floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    RmsProp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    /// RMSProp decay ρ.
    pub decay: f64,
    /// RMSProp δ.
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            lr: 1e-3,
            momentum: 0.9,
            decay: 0.9,
            eps: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.decay)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer with per-parameter accumulators (velocity or squared-gradient
/// average), created lazily with the parameter's shape.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    accum: Grads,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            accum: Grads::new(),
        }
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accum.get(name)
    }

    /// SGD: `θ -= η·g`. Momentum: `v = μ·v + g`, `θ -= η·v`.
    /// RMSProp: `a = ρ·a + (1-ρ)·g²`, `θ -= η·g / (sqrt(a) + δ)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<()> {
        let OptimizerConfig {
            kind,
            lr,
            momentum,
            decay,
            eps,
        } = self.config;
        for (name, g) in grads {
            let theta = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter {name}")))?;
            theta.expect_same_shape(g, "optimizer_step")?;
            let acc = self
                .accum
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (t, a) = (theta.data_mut(), acc.data_mut());
            for ((ti, ai), &gi) in t.iter_mut().zip(a.iter_mut()).zip(g.data()) {
                let update = match kind {
                    OptimizerKind::Sgd => lr * gi,
                    OptimizerKind::SgdMomentum => {
                        *ai = momentum * *ai + gi;
                        lr * *ai
                    }
                    OptimizerKind::RmsProp => {
                        *ai = decay * *ai + (1.0 - decay) * gi * gi;
                        lr * gi / (ai.sqrt() + eps)
                    }
                };
                if !update.is_finite() {
                    return Err(Error::NonFinite(format!("update of {name}")));
                }
                *ti -= update;
            }
        }
        Ok(())
    }
}

/// Train on sequences no longer than `max_len` for `epochs` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPhase {
    pub max_len: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainLoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
    /// Evaluate (and emit a metrics row) every this many epochs, and always
    /// after the last one.
    pub eval_every: usize,
    /// Ordered phases that run before training on full-length data.
    pub curriculum: Option<Vec<CurriculumPhase>>,
}

impl Default for TrainLoopConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            clip: Some(5.0),
            seed: 0,
            eval_every: 1,
            curriculum: None,
        }
    }
}

impl TrainLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size and eval_every must be positive".into(),
            ));
        }
        if let Some(t) = self.clip {
            if !(t > 0.0) {
                return Err(Error::Config(format!("clip threshold must be positive, got {t}")));
            }
        }
        if let Some(phases) = &self.curriculum {
            if phases.iter().any(|p| p.max_len == 0) {
                return Err(Error::Config("curriculum max_len must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Eval NLL and accuracy of the deterministic network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub nll: f64,
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 256;

/// Deterministic evaluation; noise is replaced by its expectation (output
/// noise) or removed (input noise). Consumes no randomness.
pub fn evaluate(net: &Network, data: &SyntheticDataset) -> Result<EvalStats> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let order: Vec<usize> = (0..n).collect();
    let mut nll = 0.0;
    let mut correct = 0usize;
    for idx in order.chunks(EVAL_BATCH) {
        let batch = data.batch(idx);
        let mut tape = Tape::new();
        let mut ctx = NoiseCtx::eval();
        let (_, logits, loss) = net.loss(&mut tape, batch.inputs(), &batch.targets, &mut ctx)?;
        nll += tape.value(loss).data()[0] * idx.len() as f64;
        correct += tape
            .value(logits)
            .argmax_rows()
            .iter()
            .zip(&batch.targets)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(EvalStats {
        nll: nll / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

/// Base noise scale of the first noisy site, or 0 when nothing is noisy.
pub fn base_noise_c(net: &Network) -> f64 {
    use crate::activations::NoiseMode;
    use crate::nn::Activation;
    let noisy = |a: &Activation| a.noisy().filter(|c| c.mode != NoiseMode::Deterministic).map(|c| c.c);
    match &net.arch {
        Architecture::Mlp(m) => m.layers.iter().find_map(|l| noisy(&l.activation)),
        Architecture::Sequence(s) => {
            let (gate, cand) = match &s.cell {
                crate::nn::RecurrentCell::Gru(c) => (c.gate, c.candidate),
                crate::nn::RecurrentCell::Lstm(c) => (c.gate, c.candidate),
            };
            noisy(&gate).or_else(|| noisy(&cand))
        }
    }
    .unwrap_or(0.0)
}

/// Mutable loop position shared across epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoopState {
    pub epoch: usize,
    pub minibatches: u64,
}

/// One pass over `train`: per minibatch, a noisy forward at the current
/// annealed `c`, backward, optional clipping and an optimizer step. Then a
/// deterministic evaluation on `eval`.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &mut Network,
    train: &SyntheticDataset,
    eval: &SyntheticDataset,
    optimizer: &mut Optimizer,
    schedule: Option<&AnnealSchedule>,
    cfg: &TrainLoopConfig,
    rng: &mut RngStream,
    state: &mut LoopState,
) -> Result<MetricsRow> {
    let start = Instant::now();
    let train_nll = run_minibatches(net, train, optimizer, schedule, cfg, rng, state)?;
    let stats = evaluate(net, eval)?;
    Ok(make_row(net, schedule, state, train_nll, stats, start))
}

fn make_row(
    net: &Network,
    schedule: Option<&AnnealSchedule>,
    state: &LoopState,
    train_nll: f64,
    stats: EvalStats,
    start: Instant,
) -> MetricsRow {
    MetricsRow {
        epoch: state.epoch,
        minibatches: state.minibatches,
        train_nll,
        eval_nll: stats.nll,
        eval_accuracy: stats.accuracy,
        eval_error_pct: 100.0 * (1.0 - stats.accuracy),
        c: schedule.map_or_else(|| base_noise_c(net), |s| s.value(state.minibatches)),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn run_minibatches(
    net: &mut Network,
    train: &SyntheticDataset,
    optimizer: &mut Optimizer,
    schedule: Option<&AnnealSchedule>,
    cfg: &TrainLoopConfig,
    rng: &mut RngStream,
    state: &mut LoopState,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    for idx in order.chunks(cfg.batch_size) {
        let batch = train.batch(idx);
        let c = schedule.map(|s| s.value(state.minibatches));
        let mut tape = Tape::new();
        let (bound, _, loss) = {
            let mut ctx = NoiseCtx::train(rng).with_c(c);
            net.loss(&mut tape, batch.inputs(), &batch.targets, &mut ctx)?
        };
        let lv = tape.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(Error::Divergence {
                epoch: state.epoch,
                last_good: None,
            });
        }
        total += lv * idx.len() as f64;
        let grads = bound.grads(&tape.backward(loss)?)?;
        let grads = match cfg.clip {
            Some(t) => clip_global_norm(grads, t)?,
            None => grads,
        };
        optimizer.step(&mut net.params, &grads)?;
        state.minibatches += 1;
    }
    Ok(total / train.len() as f64)
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: MetricsRecord,
    /// Parameters at the evaluation with the lowest eval NLL.
    pub best: ParamStore,
    pub best_epoch: usize,
}

/// Runs the curriculum phases (if any) and then full-length epochs until
/// `cfg.epochs` epochs have run in total.
pub fn train(
    net: &mut Network,
    train_set: &SyntheticDataset,
    eval_set: &SyntheticDataset,
    optimizer: &mut Optimizer,
    schedule: Option<&AnnealSchedule>,
    cfg: &TrainLoopConfig,
    rng: &mut RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(s) = schedule {
        s.validate()?;
    }
    let mut phases: Vec<(Option<usize>, usize)> = Vec::new();
    let mut remaining = cfg.epochs;
    for p in cfg.curriculum.iter().flatten() {
        let e = p.epochs.min(remaining);
        if e > 0 {
            phases.push((Some(p.max_len), e));
        }
        remaining -= e;
    }
    if remaining > 0 {
        phases.push((None, remaining));
    }

    let mut record = MetricsRecord::default();
    let mut best = (f64::INFINITY, net.params.clone(), 0usize);
    let mut state = LoopState::default();
    let mut epoch_start = Instant::now();
    for (max_len, epochs) in phases {
        let data = match max_len {
            Some(len) => train_set.truncated(len),
            None => train_set.clone(),
        };
        for _ in 0..epochs {
            state.epoch += 1;
            let train_nll = match run_minibatches(net, &data, optimizer, schedule, cfg, rng, &mut state) {
                Ok(v) => v,
                Err(Error::Divergence { epoch, .. }) => {
                    return Err(Error::Divergence {
                        epoch,
                        last_good: record.rows.last().cloned().map(Box::new),
                    })
                }
                Err(e) => return Err(e),
            };
            if state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs {
                let stats = evaluate(net, eval_set)?;
                let row = make_row(net, schedule, &state, train_nll, stats, epoch_start);
                epoch_start = Instant::now();
                if stats.nll < best.0 {
                    best = (stats.nll, net.params.clone(), state.epoch);
                }
                record.rows.push(row);
            }
        }
    }
    Ok(TrainOutcome {
        record,
        best: best.1,
        best_epoch: best.2,
    })
}
