//! Noisy hard-saturating activation functions with a small reverse-mode
//! autodiff engine, the networks built from them, training loops and an
//! experiment harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use activations::{HardSatFn, HardSatKind, NoiseCtx, NoiseMode, NoisyActConfig};
pub use autodiff::{Gradients, Primitive, Tape, VarId};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentKind, MetricsRecord, MetricsRow};
pub use nn::{Network, ParamStore};
pub use rng::RngStream;
pub use tensor::Tensor;
pub use training::{AnnealSchedule, Optimizer, OptimizerConfig};
