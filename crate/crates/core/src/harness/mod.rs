//! Experiment harness: datasets, configuration, metrics and runners.

pub mod anneal_demo;
pub mod config;
pub mod data;
pub mod experiments;
pub mod metrics;

pub use anneal_demo::{run_anneal_demo, BasinStats};
pub use config::{ExperimentConfig, ExperimentKind, OUT_ROOT_ENV};
pub use data::{Batch, DataInputs, DatasetKind, SyntheticDataset};
pub use experiments::{evaluate_checkpoint, run_experiment, run_seed, summarize_dir, ExperimentReport};
pub use metrics::{MetricsRecord, MetricsRow};
