//! Hard-saturating activations with learned, saturation-proportional noise.
//!
//! A hard-saturating function is the clipped first-order expansion of a soft
//! one: `h(x) = clip(u(x), lo, hi)` where `u` is the linearization around 0.
//! The gap `Δ = h(x) - u(x)` is zero in the linear regime and grows linearly
//! once `|x|` passes the threshold `x_t`. Noise is scaled by
//!
//! ```text
//! σ(x) = c · (sigmoid(p · Δ) - 0.5)²
//! ```
//!
//! so it vanishes exactly where the function is linear and switches on only
//! where the gradient of `h` is zero. `p` is learned.
//!
//! Output-noise modes (NAN, NAH) compute
//!
//! ```text
//! φ(x, ξ) = u(x) + α·Δ + d(x)·σ(x)·ε,   d(x) = -sgn(x)·sgn(1 - α)
//! ```
//!
//! with `ε = ξ` (normal) or `ε = |ξ|` (half-normal). This is the same quantity
//! as `α·h + (1-α)·u + d·σ·ε`, but written so that the unsaturated regime
//! returns `u(x) = h(x)` bit-for-bit. Input-noise modes (NANI, NANIL, NANIS)
//! perturb the argument instead: `φ = h(x + σ·ξ)`.
//!
//! The sampled noise is a constant on the tape. Gradients flow through `u`,
//! `h`, `σ(x)` and `p`, never through `ε`.

use std::f64::consts::FRAC_2_PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, sign, Tape, VarId};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// `E[|ξ|]` for standard normal `ξ`.
pub fn half_normal_mean() -> f64 {
    FRAC_2_PI.sqrt()
}

/// Standard deviation of `|ξ|` for standard normal `ξ`.
pub fn half_normal_std() -> f64 {
    (1.0 - FRAC_2_PI).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardSatKind {
    HardSigmoid,
    HardTanh,
}

/// `h(x) = clip(slope·x + intercept, clip_lo, clip_hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardSatFn {
    pub kind: HardSatKind,
    pub slope: f64,
    pub intercept: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Magnitude of the input at which `h` saturates.
    pub x_t: f64,
}

impl HardSatFn {
    pub const HARD_SIGMOID: Self = Self {
        kind: HardSatKind::HardSigmoid,
        slope: 0.25,
        intercept: 0.5,
        clip_lo: 0.0,
        clip_hi: 1.0,
        x_t: 2.0,
    };

    pub const HARD_TANH: Self = Self {
        kind: HardSatKind::HardTanh,
        slope: 1.0,
        intercept: 0.0,
        clip_lo: -1.0,
        clip_hi: 1.0,
        x_t: 1.0,
    };

    pub fn of(kind: HardSatKind) -> Self {
        match kind {
            HardSatKind::HardSigmoid => Self::HARD_SIGMOID,
            HardSatKind::HardTanh => Self::HARD_TANH,
        }
    }

    #[inline]
    pub fn u(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        self.u(x).max(self.clip_lo).min(self.clip_hi)
    }

    #[inline]
    pub fn delta(&self, x: f64) -> f64 {
        self.h(x) - self.u(x)
    }

    /// Derivative of `h`, with slope kept at the thresholds.
    #[inline]
    pub fn h_prime(&self, x: f64) -> f64 {
        let u = self.u(x);
        if u >= self.clip_lo && u <= self.clip_hi {
            self.slope
        } else {
            0.0
        }
    }

    fn u_var(&self, tape: &mut Tape, x: VarId) -> Result<VarId> {
        let scaled = tape.scale(x, self.slope)?;
        tape.shift(scaled, self.intercept)
    }

    /// Records `h(x)` on the tape.
    pub fn h_var(&self, tape: &mut Tape, x: VarId) -> Result<VarId> {
        let u = self.u_var(tape, x)?;
        tape.clip(u, self.clip_lo, self.clip_hi)
    }
}

/// `u(x)`, the unclipped linearization.
pub fn linearize(base: &HardSatFn, x: &Tensor) -> Tensor {
    x.map(|v| base.u(v))
}

/// `h(x)`, the hard-saturating function.
pub fn hard_sat(base: &HardSatFn, x: &Tensor) -> Tensor {
    x.map(|v| base.h(v))
}

/// `Δ = h(x) - u(x)`.
pub fn delta(base: &HardSatFn, x: &Tensor) -> Tensor {
    x.map(|v| base.delta(v))
}

/// `σ = c·(sigmoid(p·Δ) - 0.5)²` for a single element.
#[inline]
pub fn sigma(c: f64, p: f64, delta: f64) -> f64 {
    let s = sigmoid(p * delta) - 0.5;
    c * s * s
}

/// Elementwise noise standard deviation for a shared scalar `p`.
pub fn noise_std(c: f64, p: f64, delta: &Tensor) -> Tensor {
    delta.map(|d| sigma(c, p, d))
}

/// `d(x) = -sgn(x)·sgn(1 - α)` with `sgn(0) = 1`.
pub fn direction(x: &Tensor, alpha: f64) -> Tensor {
    let s = sign(1.0 - alpha);
    x.map(|v| -sign(v) * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Plain `h(x)`, no noise path.
    #[serde(rename = "det")]
    Deterministic,
    /// Normal noise at the output.
    #[serde(rename = "nan")]
    Nan,
    /// Half-normal noise at the output.
    #[serde(rename = "nah")]
    Nah,
    /// Normal noise at the input, fixed σ.
    #[serde(rename = "nani")]
    Nani,
    /// Normal noise at the input, learned σ.
    #[serde(rename = "nanil")]
    Nanil,
    /// Normal noise at the input, fixed σ, only where the unit saturates.
    #[serde(rename = "nanis")]
    Nanis,
}

impl NoiseMode {
    pub const ALL: [NoiseMode; 6] = [
        NoiseMode::Deterministic,
        NoiseMode::Nan,
        NoiseMode::Nah,
        NoiseMode::Nani,
        NoiseMode::Nanil,
        NoiseMode::Nanis,
    ];

    pub fn is_output_noise(self) -> bool {
        matches!(self, NoiseMode::Nan | NoiseMode::Nah)
    }

    pub fn is_input_noise(self) -> bool {
        matches!(self, NoiseMode::Nani | NoiseMode::Nanil | NoiseMode::Nanis)
    }

    /// Whether the mode has a learnable `p`.
    pub fn uses_p(self) -> bool {
        matches!(self, NoiseMode::Nan | NoiseMode::Nah | NoiseMode::Nanil)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Deterministic => "det",
            NoiseMode::Nan => "nan",
            NoiseMode::Nah => "nah",
            NoiseMode::Nani => "nani",
            NoiseMode::Nanil => "nanil",
            NoiseMode::Nanis => "nanis",
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::parse("noise mode", format!("unknown mode {s:?}")))
    }
}

/// How many `p` values an activation site learns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PSharing {
    /// One scalar for the whole layer.
    #[default]
    PerLayer,
    /// One value per unit.
    PerUnit,
}

/// One noisy activation site. `p` itself is a model parameter and is passed
/// to the forward functions separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyActConfig {
    pub base: HardSatKind,
    pub mode: NoiseMode,
    pub alpha: f64,
    pub c: f64,
    pub sigma_fixed: f64,
    pub p_sharing: PSharing,
}

impl Default for NoisyActConfig {
    fn default() -> Self {
        Self {
            base: HardSatKind::HardTanh,
            mode: NoiseMode::Nah,
            alpha: 1.0,
            c: 0.5,
            sigma_fixed: 0.05,
            p_sharing: PSharing::PerLayer,
        }
    }
}

impl NoisyActConfig {
    pub fn new(base: HardSatKind, mode: NoiseMode) -> Self {
        Self {
            base,
            mode,
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_sigma_fixed(mut self, sigma: f64) -> Self {
        self.sigma_fixed = sigma;
        self
    }

    pub fn hard_fn(&self) -> HardSatFn {
        HardSatFn::of(self.base)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if !(self.sigma_fixed >= 0.0 && self.sigma_fixed.is_finite()) {
            return Err(Error::Config(format!(
                "sigma_fixed must be >= 0, got {}",
                self.sigma_fixed
            )));
        }
        Ok(())
    }

    /// Length of the `p` vector for a layer with `units` outputs, or 0 when
    /// the mode has no `p`.
    pub fn p_len(&self, units: usize) -> usize {
        match (self.mode.uses_p(), self.p_sharing) {
            (false, _) => 0,
            (true, PSharing::PerLayer) => 1,
            (true, PSharing::PerUnit) => units,
        }
    }
}

/// A standard-normal draw and the noise value it induces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSample {
    pub xi: f64,
    pub epsilon: f64,
}

impl NoiseSample {
    pub fn from_xi(mode: NoiseMode, xi: f64) -> Self {
        let epsilon = if mode == NoiseMode::Nah { xi.abs() } else { xi };
        Self { xi, epsilon }
    }

    pub fn draw(mode: NoiseMode, rng: &mut RngStream) -> Self {
        Self::from_xi(mode, rng.normal())
    }
}

/// Randomness and phase for one forward pass.
///
/// Evaluation contexts carry no generator, so the deterministic path cannot
/// consume random state.
pub struct NoiseCtx<'a> {
    rng: Option<&'a mut RngStream>,
    training: bool,
    c_override: Option<f64>,
}

impl<'a> NoiseCtx<'a> {
    pub fn train(rng: &'a mut RngStream) -> Self {
        Self {
            rng: Some(rng),
            training: true,
            c_override: None,
        }
    }

    pub fn eval() -> Self {
        Self {
            rng: None,
            training: false,
            c_override: None,
        }
    }

    /// Replaces `c` of every output-noise and NANIL site, e.g. with an
    /// annealed value.
    pub fn with_c(mut self, c: Option<f64>) -> Self {
        self.c_override = c;
        self
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn c_override(&self) -> Option<f64> {
        self.c_override
    }

    /// Standard-normal draws, one per element of `shape`.
    pub fn draw_xi(&mut self, shape: &[usize]) -> Result<Tensor> {
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::InvalidArgument("training pass needs a random stream".into()))?;
        Ok(Tensor::from_fn(shape, |_| rng.normal()))
    }
}

fn require_p(cfg: &NoisyActConfig, p: Option<VarId>) -> Result<VarId> {
    p.ok_or_else(|| {
        Error::InvalidArgument(format!("noise mode {} needs a learnable p", cfg.mode))
    })
}

/// `σ(x)` as a function of the recorded `Δ` and `p`.
fn sigma_var(tape: &mut Tape, delta: VarId, p: VarId, c: f64) -> Result<VarId> {
    let shape = tape.value(delta).shape().to_vec();
    let p_full = tape.broadcast(p, &shape)?;
    let pd = tape.mul(p_full, delta)?;
    let g = tape.sigmoid(pd)?;
    let centered = tape.shift(g, -0.5)?;
    let sq = tape.square(centered)?;
    tape.scale(sq, c)
}

fn direction_var(tape: &mut Tape, x: VarId, alpha: f64) -> Result<VarId> {
    let s = tape.sign(x)?;
    tape.scale(s, -sign(1.0 - alpha))
}

/// Records `u + α·Δ + d·σ·ε` for given `ε` values.
pub fn output_noise_var(
    tape: &mut Tape,
    cfg: &NoisyActConfig,
    x: VarId,
    p: VarId,
    epsilon: Tensor,
    c: f64,
) -> Result<VarId> {
    let base = cfg.hard_fn();
    let u = base.u_var(tape, x)?;
    let h = tape.clip(u, base.clip_lo, base.clip_hi)?;
    let delta = tape.sub(h, u)?;
    let sigma = sigma_var(tape, delta, p, c)?;
    let d = direction_var(tape, x, cfg.alpha)?;
    let eps = tape.constant(epsilon);
    let ds = tape.mul(d, sigma)?;
    let noise = tape.mul(ds, eps)?;
    let biased = tape.scale(delta, cfg.alpha)?;
    let mean = tape.add(u, biased)?;
    tape.add(mean, noise)
}

/// Records `h(x + s·ξ)` where `s` is `σ_fixed` (NANI, NANIS) or the learned
/// `σ(x)` (NANIL). For NANIS the perturbation is masked to `|x| >= x_t`.
pub fn input_noise_var(
    tape: &mut Tape,
    cfg: &NoisyActConfig,
    x: VarId,
    p: Option<VarId>,
    xi: Tensor,
    c: f64,
) -> Result<VarId> {
    let base = cfg.hard_fn();
    let shift = match cfg.mode {
        NoiseMode::Nani => {
            let s = cfg.sigma_fixed;
            tape.constant(xi.map(|v| s * v))
        }
        NoiseMode::Nanis => {
            let s = cfg.sigma_fixed;
            let xv = tape.value(x);
            let masked = xv.zip_map(&xi, "nanis", |xe, ze| {
                if xe.abs() >= base.x_t {
                    s * ze
                } else {
                    0.0
                }
            })?;
            tape.constant(masked)
        }
        NoiseMode::Nanil => {
            let p = require_p(cfg, p)?;
            let u = base.u_var(tape, x)?;
            let h = tape.clip(u, base.clip_lo, base.clip_hi)?;
            let delta = tape.sub(h, u)?;
            let sigma = sigma_var(tape, delta, p, c)?;
            let xi = tape.constant(xi);
            tape.mul(sigma, xi)?
        }
        mode => {
            return Err(Error::ModeMismatch {
                op: "forward_input_noise",
                mode: mode.to_string(),
            })
        }
    };
    let perturbed = tape.add(x, shift)?;
    base.h_var(tape, perturbed)
}

/// Records the test-time output: `E_ξ[φ]` for output-noise modes, `h(x)` for
/// everything else (input noise is removed rather than integrated).
pub fn expected_output_var(
    tape: &mut Tape,
    cfg: &NoisyActConfig,
    x: VarId,
    p: Option<VarId>,
    c: f64,
) -> Result<VarId> {
    match cfg.mode {
        NoiseMode::Nan => {
            let base = cfg.hard_fn();
            let u = base.u_var(tape, x)?;
            let h = tape.clip(u, base.clip_lo, base.clip_hi)?;
            let delta = tape.sub(h, u)?;
            let biased = tape.scale(delta, cfg.alpha)?;
            tape.add(u, biased)
        }
        NoiseMode::Nah => {
            let p = require_p(cfg, p)?;
            let shape = tape.value(x).shape().to_vec();
            let mean_eps = Tensor::full(&shape, half_normal_mean());
            output_noise_var(tape, cfg, x, p, mean_eps, c)
        }
        _ => cfg.hard_fn().h_var(tape, x),
    }
}

/// Records the activation for the phase and randomness in `ctx`.
pub fn apply(
    tape: &mut Tape,
    cfg: &NoisyActConfig,
    x: VarId,
    p: Option<VarId>,
    ctx: &mut NoiseCtx<'_>,
) -> Result<VarId> {
    let c = ctx.c_override.unwrap_or(cfg.c);
    if cfg.mode == NoiseMode::Deterministic {
        return cfg.hard_fn().h_var(tape, x);
    }
    if !ctx.training {
        return expected_output_var(tape, cfg, x, p, c);
    }
    let shape = tape.value(x).shape().to_vec();
    let xi = ctx.draw_xi(&shape)?;
    if cfg.mode.is_output_noise() {
        let p = require_p(cfg, p)?;
        let eps = if cfg.mode == NoiseMode::Nah {
            xi.map(f64::abs)
        } else {
            xi
        };
        output_noise_var(tape, cfg, x, p, eps, c)
    } else {
        input_noise_var(tape, cfg, x, p, xi, c)
    }
}

fn eager(f: impl FnOnce(&mut Tape, VarId, VarId) -> Result<VarId>, x: &Tensor, p: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let pv = tape.leaf(Tensor::vector(vec![p]));
    let out = f(&mut tape, xv, pv)?;
    Ok(tape.value(out).clone())
}

/// Output-noise forward for NAN/NAH. With `training == false` this returns
/// [`expected_output`]. One `ε` is drawn per element.
pub fn forward_output_noise(
    cfg: &NoisyActConfig,
    x: &Tensor,
    p: f64,
    rng: &mut RngStream,
    training: bool,
) -> Result<Tensor> {
    if !cfg.mode.is_output_noise() {
        return Err(Error::ModeMismatch {
            op: "forward_output_noise",
            mode: cfg.mode.to_string(),
        });
    }
    if !training {
        return expected_output(cfg, x, p);
    }
    let mut ctx = NoiseCtx::train(rng);
    eager(|t, xv, pv| apply(t, cfg, xv, Some(pv), &mut ctx), x, p)
}

/// Deterministic test-time output for NAN, NAH and Deterministic modes.
pub fn expected_output(cfg: &NoisyActConfig, x: &Tensor, p: f64) -> Result<Tensor> {
    if cfg.mode.is_input_noise() {
        return Err(Error::ModeMismatch {
            op: "expected_output",
            mode: cfg.mode.to_string(),
        });
    }
    eager(|t, xv, pv| expected_output_var(t, cfg, xv, Some(pv), cfg.c), x, p)
}

/// Input-noise forward for NANI/NANIL/NANIS. With `training == false` the
/// noise is removed and no random state is consumed.
pub fn forward_input_noise(
    cfg: &NoisyActConfig,
    x: &Tensor,
    p: f64,
    rng: &mut RngStream,
    training: bool,
) -> Result<Tensor> {
    if !cfg.mode.is_input_noise() {
        return Err(Error::ModeMismatch {
            op: "forward_input_noise",
            mode: cfg.mode.to_string(),
        });
    }
    if !training {
        return Ok(hard_sat(&cfg.hard_fn(), x));
    }
    let xi = Tensor::from_fn(x.shape(), |_| rng.normal());
    eager(|t, xv, pv| input_noise_var(t, cfg, xv, Some(pv), xi, cfg.c), x, p)
}

/// Closed-form partial derivatives of the output-noise activation at a
/// single point with a frozen `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturatedGradient {
    /// `∂φ/∂x`
    pub dx: f64,
    /// `∂φ/∂p`
    pub dp: f64,
}

/// `∂φ/∂x = α·h' + (1-α)·u' + d·σ'·ε` with
/// `σ' = 2c·(g(pΔ) - 0.5)·g'(pΔ)·p·(h' - u')`, and
/// `∂φ/∂p = d·ε·2c·(g(pΔ) - 0.5)·g'(pΔ)·Δ`.
pub fn saturated_gradient(cfg: &NoisyActConfig, x: f64, p: f64, epsilon: f64) -> SaturatedGradient {
    let base = cfg.hard_fn();
    let h_prime = base.h_prime(x);
    let u_prime = base.slope;
    let delta = base.delta(x);
    let g = sigmoid(p * delta);
    let g_prime = g * (1.0 - g);
    let d = -sign(x) * sign(1.0 - cfg.alpha);
    let common = 2.0 * cfg.c * (g - 0.5) * g_prime;
    let sigma_prime = common * p * (h_prime - u_prime);
    SaturatedGradient {
        dx: cfg.alpha * h_prime + (1.0 - cfg.alpha) * u_prime + d * sigma_prime * epsilon,
        dp: d * epsilon * common * delta,
    }
}
