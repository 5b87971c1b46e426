//! Incremental training cycle: distill, train, validate, grow, iterate.

mod growth;
mod metrics;
mod optim;
mod run;
mod validate;

pub use growth::{grow_if_needed, GrowthDecision, GrowthPolicy, GrowthRule};
pub use metrics::{
    aggregate, full_train_bytes, Aggregates, Regime, RunLog, RunSummary, ScenarioRef, StepMetrics,
};
pub use optim::{
    train_model, training_flops, LrSchedule, OptimizerConfig, OptimizerKind, TrainReport,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use run::{
    run_incremental, run_incremental_with, run_regimes, DataAccess, DataSplit, DistillCache,
    RunConfig, RunContext, RunFailure, RunOutput,
};
pub use validate::{accuracy, predict, validate, Accuracy};
