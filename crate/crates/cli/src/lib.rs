//! Experiment runner for distill-cl: configuration files, artifact formats
//! and the run/report/verify commands.

pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod ini;

pub use config::{ExperimentConfig, FieldError};
pub use error::{CliError, Failure};
