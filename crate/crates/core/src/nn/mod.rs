//! Network blocks built from noisy activations.

pub mod classifier;
pub mod layers;
pub mod params;
pub mod recurrent;

use serde::{Deserialize, Serialize};

pub use classifier::{classify_sequence, mean_pool, predict, SequenceClassifier};
pub use layers::{dense_forward, Activation, DenseLayer, Mlp};
pub use params::{Bound, Grads, ParamStore};
pub use recurrent::{gru_step, lstm_step, GruCell, LstmCell, RecurrentCell, RecurrentInit};

use crate::activations::NoiseCtx;
use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A minibatch of model inputs.
#[derive(Clone, Copy, Debug)]
pub enum Inputs<'a> {
    /// `[batch, features]`
    Dense(&'a Tensor),
    /// Equal-length token sequences.
    Tokens(&'a [Vec<usize>]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Architecture {
    Mlp(Mlp),
    Sequence(SequenceClassifier),
}

/// Architecture plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: ParamStore,
}

impl Network {
    pub fn classes(&self) -> usize {
        match &self.arch {
            Architecture::Mlp(m) => m.output_dim(),
            Architecture::Sequence(s) => s.classes(),
        }
    }

    pub fn logits(
        &self,
        tape: &mut Tape,
        params: &Bound,
        inputs: Inputs<'_>,
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<VarId> {
        match (&self.arch, inputs) {
            (Architecture::Mlp(m), Inputs::Dense(x)) => {
                let x = tape.constant(x.clone());
                m.forward(tape, params, x, ctx)
            }
            (Architecture::Sequence(s), Inputs::Tokens(t)) => s.logits(tape, params, t, ctx),
            _ => Err(Error::InvalidArgument(
                "input kind does not match the network architecture".into(),
            )),
        }
    }

    /// Records logits and mean NLL on a fresh binding of the parameters.
    pub fn loss(
        &self,
        tape: &mut Tape,
        inputs: Inputs<'_>,
        targets: &[usize],
        ctx: &mut NoiseCtx<'_>,
    ) -> Result<(Bound, VarId, VarId)> {
        let bound = self.params.bind(tape);
        let logits = self.logits(tape, &bound, inputs, ctx)?;
        let loss = tape.softmax_cross_entropy(logits, targets)?;
        Ok((bound, logits, loss))
    }
}
