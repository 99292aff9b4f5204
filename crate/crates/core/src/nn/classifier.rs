use serde::{Deserialize, Serialize};

use crate::activations::NoiseCtx;
use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::nn::layers::{fan_in_uniform, Activation, Mlp};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::recurrent::{RecurrentCell, RecurrentInit};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Token sequences -> (embedding or one-hot) -> recurrent cell -> mean of the
/// hidden states over time -> MLP head -> class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceClassifier {
    pub vocab: usize,
    /// Embedding width; `None` feeds one-hot vectors straight into the cell.
    pub embed: Option<usize>,
    pub cell: RecurrentCell,
    pub head: Mlp,
}

impl SequenceClassifier {
    /// ReLU head with one hidden layer of `head_hidden` units.
    pub fn new(vocab: usize, embed: Option<usize>, cell: RecurrentCell, head_hidden: usize, classes: usize) -> Self {
        let head = Mlp::new("head", &[cell.hidden(), head_hidden, classes], Activation::Relu);
        Self {
            vocab,
            embed,
            cell,
            head,
        }
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn init(&self, store: &mut ParamStore, init: RecurrentInit, forget_bias: f64, rng: &mut RngStream) -> Result<()> {
        let expected_in = self.embed.unwrap_or(self.vocab);
        if self.cell.input() != expected_in {
            return Err(Error::Config(format!(
                "cell input {} does not match encoder width {expected_in}",
                self.cell.input()
            )));
        }
        if let Some(dim) = self.embed {
            store.insert("embed", fan_in_uniform(self.vocab, dim, 1.0, rng))?;
        }
        self.cell.init(store, init, forget_bias, rng)?;
        self.head.init(store, 1.0, rng)
    }

    /// Logits `[batch, classes]` for a batch of equal-length sequences.
    pub fn logits(
        &self,
        tape: &mut Tape,
        params: &Bound,
        batch: &[Vec<usize>],
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<VarId> {
        let steps = batch.first().map_or(0, Vec::len);
        if steps == 0 || batch.iter().any(|s| s.len() != steps) {
            return Err(Error::InvalidArgument(
                "sequence batch must be nonempty with equal lengths".into(),
            ));
        }
        if let Some(&tok) = batch.iter().flatten().find(|&&t| t >= self.vocab) {
            return Err(Error::InvalidArgument(format!(
                "token {tok} outside vocabulary of size {}",
                self.vocab
            )));
        }
        let embed = self.embed.map(|_| params.get("embed")).transpose()?;
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let onehot = Tensor::from_fn(&[batch.len(), self.vocab], |i| {
                let (b, v) = (i / self.vocab, i % self.vocab);
                if batch[b][t] == v {
                    1.0
                } else {
                    0.0
                }
            });
            let x = tape.constant(onehot);
            inputs.push(match embed {
                Some(e) => tape.matmul(x, e)?,
                None => x,
            });
        }
        let states = self.cell.unroll(tape, params, &inputs, ctx)?;
        let pooled = mean_pool(tape, &states)?;
        self.head.forward(tape, params, pooled, ctx)
    }
}

/// Arithmetic mean of the hidden states.
pub fn mean_pool(tape: &mut Tape, states: &[VarId]) -> Result<VarId> {
    let (&first, rest) = states
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("cannot pool an empty sequence".into()))?;
    if rest.is_empty() {
        return Ok(first);
    }
    let mut acc = first;
    for &s in rest {
        acc = tape.add(acc, s)?;
    }
    tape.scale(acc, 1.0 / states.len() as f64)
}

/// Eager logits for a single sequence.
pub fn classify_sequence(
    model: &SequenceClassifier,
    params: &ParamStore,
    tokens: &[usize],
    rng: &mut RngStream,
    training: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut ctx = if training { NoiseCtx::train(rng) } else { NoiseCtx::eval() };
    let out = model.logits(&mut tape, &bound, &[tokens.to_vec()], &mut ctx)?;
    let logits = tape.value(out).clone();
    let k = logits.len();
    logits.reshape(vec![k])
}

/// Predicted class with ties broken toward the lowest index.
pub fn predict(logits: &Tensor) -> usize {
    let k = logits.len();
    logits.clone().reshape(vec![1, k]).expect("same length").argmax_rows()[0]
}
