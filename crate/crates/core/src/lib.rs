//! Deep bootstrap inference for nonparametric regression.
//!
//! A conditional diffusion model is trained by denoising score matching on
//! `(x, y)` pairs, responses are drawn from it with an exponential-integrator
//! discretization of the reverse-time SDE, and the regression function is
//! estimated as the conditional sample mean. Bootstrap datasets are then
//! synthesized from the learned conditional law at the original covariates,
//! the model is retrained on each one, and the spread of the replicate
//! estimates calibrates pointwise confidence intervals.
//!
//! Module map:
//!
//! - [`mlp`]: dense ReLU network, reverse-mode gradients, Adam.
//! - [`diffusion`]: VP schedule, perturbation kernel, score-matching loss,
//!   trainer and the EI sampler.
//! - [`bootstrap`]: conditional-mean estimator, bootstrap datasets,
//!   empirical CDF/quantiles and interval assembly.
//! - [`benchmark`]: synthetic regression targets, coverage metrics and
//!   end-to-end experiments.
//! - [`diagnostics`]: analytic score oracles, 1-D Wasserstein distances and
//!   trend probes.
//! - [`config`], [`checkpoint`], [`data`]: the file formats.

pub mod benchmark;
pub mod bootstrap;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod mlp;
pub mod rng;

pub use data::RegressionDataset;
pub use diffusion::{
    build_schedule, ei_sample, train_score, DiffusionSchedule, GridKind, SamplerConfig,
    StandardizationState, TrainConfig, TrainMode,
};
pub use error::{Error, Result};
pub use mlp::{AdamState, MlpScoreNet};

pub use benchmark::{
    compute_metrics, generate_dataset, run_experiment, ExperimentConfig, MetricsReport, SyntheticTarget, TargetId,
};
pub use bootstrap::{
    confidence_interval, empirical_cdf, quantile, run_bootstrap, BootstrapConfig, BootstrapResult,
};
