//! Experiment runner for the multi-carrier parametric loudspeaker model.

// `!(x > 0.0)` is how NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::{ExperimentConfig, Preset};
pub use error::{CliError, CliResult};
pub use experiment::{Experiment, Scope, Summary};
