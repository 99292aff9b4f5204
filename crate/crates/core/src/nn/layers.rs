use serde::{Deserialize, Serialize};

use crate::activations::{self, NoiseCtx, NoisyActConfig};
use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::nn::params::{Bound, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Nonlinearity applied after an affine map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    /// Hard-saturating function with an optional noise path.
    Noisy(NoisyActConfig),
}

impl Activation {
    pub fn noisy(&self) -> Option<&NoisyActConfig> {
        match self {
            Activation::Noisy(cfg) => Some(cfg),
            _ => None,
        }
    }

    /// Number of `p` values needed for a site with `units` outputs.
    pub fn p_len(&self, units: usize) -> usize {
        self.noisy().map_or(0, |cfg| cfg.p_len(units))
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        x: VarId,
        p: Option<VarId>,
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<VarId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Noisy(cfg) => activations::apply(tape, cfg, x, p, ctx),
        }
    }
}

/// Uniform on `±gain·sqrt(3/fan_in)`, i.e. variance `gain²/fan_in`.
pub fn fan_in_uniform(rows: usize, cols: usize, gain: f64, rng: &mut RngStream) -> Tensor {
    let limit = gain * (3.0 / rows as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| rng.uniform(-limit, limit))
}

/// Square orthogonal matrix (modified Gram-Schmidt on Gaussian columns)
/// multiplied by `scale`.
pub fn orthogonal(n: usize, scale: f64, rng: &mut RngStream) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for q in &cols {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= dot * qi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        cols.push(v.into_iter().map(|a| a / norm).collect());
    }
    Tensor::from_fn(&[n, n], |i| scale * cols[i % n][i / n])
}

/// Draws the initial `p` values, uniform on `[-1, 1]`.
pub fn init_p(len: usize, rng: &mut RngStream) -> Tensor {
    Tensor::from_fn(&[len], |_| rng.uniform(-1.0, 1.0))
}

/// Fully connected layer `activation(x·W + b)`.
///
/// Parameters live in the store as `{name}.weight` `[input, output]`,
/// `{name}.bias` `[output]` and, for noisy activations with a learned scale,
/// `{name}.p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(name: impl Into<String>, input: usize, output: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            activation,
        }
    }

    fn key(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, gain: f64, rng: &mut RngStream) -> Result<()> {
        store.insert(self.key("weight"), fan_in_uniform(self.input, self.output, gain, rng))?;
        store.insert(self.key("bias"), Tensor::zeros(&[self.output]))?;
        let p_len = self.activation.p_len(self.output);
        if p_len > 0 {
            store.insert(self.key("p"), init_p(p_len, rng))?;
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        x: VarId,
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<VarId> {
        let in_shape = tape.value(x).shape().to_vec();
        if in_shape.len() != 2 || in_shape[1] != self.input {
            return Err(Error::Shape {
                op: "dense_forward",
                lhs: in_shape,
                rhs: vec![self.input, self.output],
            });
        }
        let w = params.get(&self.key("weight"))?;
        let b = params.get(&self.key("bias"))?;
        let xw = tape.matmul(x, w)?;
        let z = tape.add_bias(xw, b)?;
        let p = params.try_get(&self.key("p"));
        self.activation.apply(tape, z, p, ctx)
    }
}

/// Stack of dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`; hidden layers use `hidden`, the
    /// last layer is linear.
    pub fn new(prefix: &str, sizes: &[usize], hidden: Activation) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                DenseLayer::new(format!("{prefix}{i}"), sizes[i], sizes[i + 1], act)
            })
            .collect();
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn init(&self, store: &mut ParamStore, gain: f64, rng: &mut RngStream) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, gain, rng))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        x: VarId,
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<VarId> {
        self.layers
            .iter()
            .try_fold(x, |h, layer| layer.forward(tape, params, h, ctx))
    }
}

/// Eager single-layer forward.
pub fn dense_forward(
    layer: &DenseLayer,
    params: &ParamStore,
    x: &Tensor,
    rng: &mut RngStream,
    training: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let mut ctx = if training { NoiseCtx::train(rng) } else { NoiseCtx::eval() };
    let out = layer.forward(&mut tape, &bound, xv, &mut ctx)?;
    Ok(tape.value(out).clone())
}
