//! Synthetic regression benchmarks, coverage metrics and experiment runs.

mod experiment;
mod metrics;
mod targets;

pub use experiment::{
    run_experiment, run_experiment_with, summary_text, table2_shape, write_artifacts, ExperimentConfig,
    ExperimentOutcome, Profile, EXPERIMENT_KEYS,
};
pub use metrics::{compute_metrics, MetricsReport};
pub use targets::{generate_covariates, generate_dataset, CovariateLaw, SyntheticTarget, TargetId};
