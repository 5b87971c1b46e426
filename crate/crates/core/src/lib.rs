//! Incremental learning with distribution-matching dataset distillation and
//! adaptive model capacity.
//!
//! Each arriving data subset is compressed into a few synthetic images per
//! class; a fresh model is trained on the accumulated synthetic buffer and is
//! promoted to a larger architecture when validation accuracy drops.

pub mod data;
pub mod distill;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod seed;
pub mod trainer;

pub use data::{ImageShape, LabeledSet};
pub use distill::{distill, DistillConfig, DistilledBuffer};
pub use error::{Error, Result};
pub use model::{build_model, count_flops, FlopsCount, ModelParams, ModelSpec};
pub use scalar::Scalar;
