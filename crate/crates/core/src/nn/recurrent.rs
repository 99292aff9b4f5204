//! GRU and LSTM cells whose gate and candidate nonlinearities are
//! [`Activation`]s, so hard-saturating noisy units drop in for `sigm`/`tanh`.

use serde::{Deserialize, Serialize};

use crate::activations::{HardSatKind, NoiseCtx, NoiseMode, NoisyActConfig};
use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::nn::layers::{fan_in_uniform, init_p, orthogonal, Activation};
use crate::nn::params::{Bound, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// How recurrent (hidden-to-hidden) matrices are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecurrentInit {
    /// Orthogonal matrix times `scale`.
    Orthogonal { scale: f64 },
    /// Same fan-in uniform scheme as input weights.
    FanIn { gain: f64 },
}

impl Default for RecurrentInit {
    fn default() -> Self {
        RecurrentInit::Orthogonal { scale: 0.01 }
    }
}

/// Gate and candidate activations for a recurrent cell with the given noise
/// settings: hard-sigmoid gates, hard-tanh candidates.
pub fn noisy_gates(template: &NoisyActConfig) -> (Activation, Activation) {
    let gate = NoisyActConfig {
        base: HardSatKind::HardSigmoid,
        ..*template
    };
    let cand = NoisyActConfig {
        base: HardSatKind::HardTanh,
        ..*template
    };
    (Activation::Noisy(gate), Activation::Noisy(cand))
}

/// Deterministic hard gates.
pub fn hard_gates() -> (Activation, Activation) {
    noisy_gates(&NoisyActConfig {
        mode: NoiseMode::Deterministic,
        ..NoisyActConfig::default()
    })
}

struct GateParams {
    w: VarId,
    u: VarId,
    b: VarId,
    p: Option<VarId>,
}

fn gate_params(params: &Bound, prefix: &str) -> Result<GateParams> {
    Ok(GateParams {
        w: params.get(&format!("{prefix}.w"))?,
        u: params.get(&format!("{prefix}.u"))?,
        b: params.get(&format!("{prefix}.b"))?,
        p: params.try_get(&format!("{prefix}.p")),
    })
}

#[allow(clippy::too_many_arguments)]
fn init_gate(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    act: &Activation,
    bias: f64,
    init: RecurrentInit,
    rng: &mut RngStream,
) -> Result<()> {
    store.insert(format!("{prefix}.w"), fan_in_uniform(input, hidden, 1.0, rng))?;
    let u = match init {
        RecurrentInit::Orthogonal { scale } => orthogonal(hidden, scale, rng),
        RecurrentInit::FanIn { gain } => fan_in_uniform(hidden, hidden, gain, rng),
    };
    store.insert(format!("{prefix}.u"), u)?;
    store.insert(format!("{prefix}.b"), Tensor::full(&[hidden], bias))?;
    let p_len = act.p_len(hidden);
    if p_len > 0 {
        store.insert(format!("{prefix}.p"), init_p(p_len, rng))?;
    }
    Ok(())
}

/// `act(x·W + h·U + b)`.
fn gate(
    tape: &mut Tape,
    g: &GateParams,
    x: VarId,
    h: VarId,
    act: &Activation,
    ctx: &mut NoiseCtx<'_>,
) -> Result<VarId> {
    let xw = tape.matmul(x, g.w)?;
    let hu = tape.matmul(h, g.u)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add_bias(pre, g.b)?;
    act.apply(tape, pre, g.p, ctx)
}

fn one_minus(tape: &mut Tape, v: VarId) -> Result<VarId> {
    let neg = tape.scale(v, -1.0)?;
    tape.shift(neg, 1.0)
}

fn check_state(tape: &Tape, h: VarId, x: VarId, input: usize, hidden: usize, op: &'static str) -> Result<()> {
    let hs = tape.value(h).shape();
    let xs = tape.value(x).shape();
    let ok = hs.len() == 2 && xs.len() == 2 && hs[1] == hidden && xs[1] == input && hs[0] == xs[0];
    if !ok {
        return Err(Error::Shape {
            op,
            lhs: hs.to_vec(),
            rhs: xs.to_vec(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    /// Update and reset gates.
    pub gate: Activation,
    pub candidate: Activation,
}

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize, gate: Activation, candidate: Activation) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
            gate,
            candidate,
        }
    }

    pub fn init(&self, store: &mut ParamStore, init: RecurrentInit, rng: &mut RngStream) -> Result<()> {
        for (g, act) in [("z", &self.gate), ("r", &self.gate), ("h", &self.candidate)] {
            let prefix = format!("{}.{g}", self.name);
            init_gate(store, &prefix, self.input, self.hidden, act, 0.0, init, rng)?;
        }
        Ok(())
    }

    /// `h_t = (1 - z)∘h_prev + z∘h̃`, with
    /// `z = gate(x·Wz + h·Uz + bz)`, `r = gate(x·Wr + h·Ur + br)` and
    /// `h̃ = candidate(x·Wh + (r∘h)·Uh + bh)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &Bound,
        h_prev: VarId,
        x: VarId,
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<VarId> {
        check_state(tape, h_prev, x, self.input, self.hidden, "gru_step")?;
        let pz = gate_params(params, &format!("{}.z", self.name))?;
        let pr = gate_params(params, &format!("{}.r", self.name))?;
        let ph = gate_params(params, &format!("{}.h", self.name))?;
        let z = gate(tape, &pz, x, h_prev, &self.gate, ctx)?;
        let r = gate(tape, &pr, x, h_prev, &self.gate, ctx)?;
        let rh = tape.mul(r, h_prev)?;
        let cand = gate(tape, &ph, x, rh, &self.candidate, ctx)?;
        let keep = one_minus(tape, z)?;
        let old = tape.mul(keep, h_prev)?;
        let new = tape.mul(z, cand)?;
        tape.add(old, new)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    /// Input, forget and output gates.
    pub gate: Activation,
    /// Cell candidate.
    pub candidate: Activation,
    /// Nonlinearity applied to the cell state before the output gate.
    pub cell_output: Activation,
}

impl LstmCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize, gate: Activation, candidate: Activation) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
            gate,
            candidate,
            cell_output: candidate,
        }
    }

    pub fn init(
        &self,
        store: &mut ParamStore,
        init: RecurrentInit,
        forget_bias: f64,
        rng: &mut RngStream,
    ) -> Result<()> {
        let gates = [
            ("i", &self.gate, 0.0),
            ("f", &self.gate, forget_bias),
            ("o", &self.gate, 0.0),
            ("g", &self.candidate, 0.0),
        ];
        for (g, act, bias) in gates {
            let prefix = format!("{}.{g}", self.name);
            init_gate(store, &prefix, self.input, self.hidden, act, bias, init, rng)?;
        }
        let p_len = self.cell_output.p_len(self.hidden);
        if p_len > 0 {
            store.insert(format!("{}.c.p", self.name), init_p(p_len, rng))?;
        }
        Ok(())
    }

    /// `c_t = f∘c_prev + i∘g`, `h_t = o∘cell_output(c_t)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &Bound,
        (h_prev, c_prev): (VarId, VarId),
        x: VarId,
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<(VarId, VarId)> {
        check_state(tape, h_prev, x, self.input, self.hidden, "lstm_step")?;
        if tape.value(c_prev).shape() != tape.value(h_prev).shape() {
            return Err(Error::Shape {
                op: "lstm_step",
                lhs: tape.value(h_prev).shape().to_vec(),
                rhs: tape.value(c_prev).shape().to_vec(),
            });
        }
        let name = &self.name;
        let i = gate(tape, &gate_params(params, &format!("{name}.i"))?, x, h_prev, &self.gate, ctx)?;
        let f = gate(tape, &gate_params(params, &format!("{name}.f"))?, x, h_prev, &self.gate, ctx)?;
        let o = gate(tape, &gate_params(params, &format!("{name}.o"))?, x, h_prev, &self.gate, ctx)?;
        let g = gate(tape, &gate_params(params, &format!("{name}.g"))?, x, h_prev, &self.candidate, ctx)?;
        let kept = tape.mul(f, c_prev)?;
        let written = tape.mul(i, g)?;
        let c = tape.add(kept, written)?;
        let pc = params.try_get(&format!("{name}.c.p"));
        let squashed = self.cell_output.apply(tape, c, pc, ctx)?;
        let h = tape.mul(o, squashed)?;
        Ok((h, c))
    }
}

/// Either recurrent cell, run over a whole sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RecurrentCell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl RecurrentCell {
    pub fn input(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.input,
            RecurrentCell::Lstm(c) => c.input,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.hidden,
            RecurrentCell::Lstm(c) => c.hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, init: RecurrentInit, forget_bias: f64, rng: &mut RngStream) -> Result<()> {
        match self {
            RecurrentCell::Gru(c) => c.init(store, init, rng),
            RecurrentCell::Lstm(c) => c.init(store, init, forget_bias, rng),
        }
    }

    /// Hidden state after every step, starting from zero state.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        params: &Bound,
        inputs: &[VarId],
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<Vec<VarId>> {
        let Some(&first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let batch = tape.value(first).shape()[0];
        let zeros = Tensor::zeros(&[batch, self.hidden()]);
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            match self {
                RecurrentCell::Gru(cell) => h = cell.step(tape, params, h, x, ctx)?,
                RecurrentCell::Lstm(cell) => (h, c) = cell.step(tape, params, (h, c), x, ctx)?,
            }
            states.push(h);
        }
        Ok(states)
    }
}

/// Eager GRU step.
pub fn gru_step(
    cell: &GruCell,
    params: &ParamStore,
    h_prev: &Tensor,
    x: &Tensor,
    rng: &mut RngStream,
    training: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = tape.leaf(h_prev.clone());
    let xv = tape.leaf(x.clone());
    let mut ctx = if training { NoiseCtx::train(rng) } else { NoiseCtx::eval() };
    let out = cell.step(&mut tape, &bound, h, xv, &mut ctx)?;
    Ok(tape.value(out).clone())
}

/// Eager LSTM step returning `(h_t, c_t)`.
pub fn lstm_step(
    cell: &LstmCell,
    params: &ParamStore,
    (h_prev, c_prev): (&Tensor, &Tensor),
    x: &Tensor,
    rng: &mut RngStream,
    training: bool,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = tape.leaf(h_prev.clone());
    let c = tape.leaf(c_prev.clone());
    let xv = tape.leaf(x.clone());
    let mut ctx = if training { NoiseCtx::train(rng) } else { NoiseCtx::eval() };
    let (h, c) = cell.step(&mut tape, &bound, (h, c), xv, &mut ctx)?;
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}
