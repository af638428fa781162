//! Variance-preserving conditional diffusion.
//!
//! Forward process on `t ∈ [0, 1]` with kernel
//! `y_t | y_0 ~ N(m_t y_0, σ_t² I)`, `m_t = 1 − t`, `σ_t = sqrt(t(2 − t))`.
//! The score network is fitted by denoising score matching on
//! `t ∈ [T, 1 − T]` and responses are generated by the exponential
//! integrator scheme run over the time-reversed process.

mod kernel;
mod loss;
mod sampler;
mod schedule;
mod standardize;
mod train;

pub use kernel::{forward_perturb, mean_coef, std_coef};
pub use loss::{dsm_loss_and_grad, dsm_loss_stochastic_batch, dsm_loss_strict, DsmScratch};
pub use sampler::{ei_sample, ei_sample_rows, NetScore, SamplerConfig, ScoreField, ScoreScratch};
pub use schedule::{build_schedule, DiffusionSchedule, GridKind};
pub use standardize::StandardizationState;
pub use train::{net_layer_sizes, train_score, train_score_from, TrainConfig, TrainMode, TrainOutcome};
