//! Deep bootstrap: conditional-mean estimation, synthetic bootstrap datasets
//! and basic (pivotal) confidence intervals.
//!
//! The pipeline is generic over a [`Fitter`] producing a
//! [`ConditionalModel`]; [`DiffusionFitter`] is the score-matching model, and
//! tests inject degenerate or oracle fitters through the same surface.
//!
//! For an evaluation point `x` with base estimate `f̂(x)` and replicate
//! estimates `f̂*_b(x)`, the centered statistics are `R*_b = f̂*_b − f̂` and
//! the `1 − α` interval is
//!
//! ```text
//! [ f̂ − Q(1 − α/2),  f̂ − Q(α/2) ]
//! ```
//!
//! where `Q` is the generalized inverse of the empirical CDF of the `R*_b`
//! (order statistic `⌈q B⌉`, no interpolation).

use std::io::Write;

use rayon::prelude::*;

use crate::data::{fmt_f64, RegressionDataset};
use crate::diffusion::{
    ei_sample, ei_sample_rows, train_score, train_score_from, DiffusionSchedule, NetScore,
    SamplerConfig, TrainConfig,
};
use crate::error::{config_err, domain_err, shape_err, Error, Result};
use crate::rng;

/// A learned conditional law `Y | X = x` that can be sampled.
pub trait ConditionalModel: Send + Sync {
    fn response_dim(&self) -> usize;

    fn covariate_dim(&self) -> usize;

    /// `count × d_Y` draws at `x`, determined by `seed`.
    fn sample(&self, x: &[f64], count: usize, seed: u64) -> Result<Vec<f64>>;

    /// One draw per row of `xs` (`rows × d_X`); returns `rows × d_Y`.
    fn sample_rows(&self, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
        let dx = self.covariate_dim();
        let mut out = Vec::with_capacity(xs.len() / dx * self.response_dim());
        for (i, x) in xs.chunks_exact(dx).enumerate() {
            out.extend(self.sample(x, 1, rng::derive_seed(seed, "row", i as u64))?);
        }
        Ok(out)
    }
}

/// Which step of the bootstrap a fit belongs to.
#[derive(Debug)]
pub enum FitStage<'a, M> {
    Base,
    Replicate {
        index: usize,
        /// Model to continue training from instead of a fresh initialization.
        warm_start: Option<&'a M>,
    },
}

pub trait Fitter: Sync {
    type Model: ConditionalModel;

    fn fit(&self, data: &RegressionDataset, seed: u64, stage: FitStage<'_, Self::Model>) -> Result<Self::Model>;
}

/// Trained score network plus the sampler settings used to draw from it.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub score: NetScore,
    pub schedule: DiffusionSchedule,
    pub clip_bound: Option<f64>,
    pub loss_trace: Vec<f64>,
}

impl ConditionalModel for DiffusionModel {
    fn response_dim(&self) -> usize {
        self.score.net.output_dim()
    }

    fn covariate_dim(&self) -> usize {
        self.score.standardization.covariate_dim()
    }

    fn sample(&self, x: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
        let cfg = SamplerConfig {
            sample_count: count,
            clip_bound: self.clip_bound,
            seed,
        };
        ei_sample(&self.score, x, &self.schedule, &cfg)
    }

    fn sample_rows(&self, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::stream(seed);
        ei_sample_rows(&self.score, xs, &self.schedule, self.clip_bound, &mut r)
    }
}

/// Score-matching fitter used for both the base model and the replicates.
///
/// The seed passed to [`Fitter::fit`] replaces the configs' own seeds.
#[derive(Debug, Clone)]
pub struct DiffusionFitter {
    pub base_train: TrainConfig,
    pub replicate_train: TrainConfig,
    pub schedule: DiffusionSchedule,
    pub hidden: Vec<usize>,
    pub clip_bound: Option<f64>,
}

impl Fitter for DiffusionFitter {
    type Model = DiffusionModel;

    fn fit(&self, data: &RegressionDataset, seed: u64, stage: FitStage<'_, DiffusionModel>) -> Result<DiffusionModel> {
        let (mut cfg, warm) = match stage {
            FitStage::Base => (self.base_train.clone(), None),
            FitStage::Replicate { warm_start, .. } => (self.replicate_train.clone(), warm_start),
        };
        cfg.seed = seed;
        let outcome = match warm {
            Some(init) => train_score_from(
                data,
                &cfg,
                &self.schedule,
                init.score.net.clone(),
                init.score.standardization.clone(),
            )?,
            None => train_score(data, &cfg, &self.schedule, &self.hidden)?,
        };
        Ok(DiffusionModel {
            score: NetScore::new(outcome.net, outcome.standardization)?,
            schedule: self.schedule.clone(),
            clip_bound: self.clip_bound,
            loss_trace: outcome.loss_trace,
        })
    }
}

/// Point mass at a fixed response, whatever the covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    pub value: Vec<f64>,
    pub covariate_dim: usize,
}

impl ConditionalModel for ConstantModel {
    fn response_dim(&self) -> usize {
        self.value.len()
    }

    fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    fn sample(&self, _x: &[f64], count: usize, _seed: u64) -> Result<Vec<f64>> {
        Ok(self.value.iter().copied().cycle().take(count * self.value.len()).collect())
    }
}

/// Ignores the data and always returns the same [`ConstantModel`].
#[derive(Debug, Clone)]
pub struct ConstantFitter {
    pub value: Vec<f64>,
}

impl Fitter for ConstantFitter {
    type Model = ConstantModel;

    fn fit(&self, data: &RegressionDataset, _seed: u64, _stage: FitStage<'_, ConstantModel>) -> Result<ConstantModel> {
        Ok(ConstantModel {
            value: self.value.clone(),
            covariate_dim: data.covariate_dim(),
        })
    }
}

/// Column means of a `rows × dim` sample buffer.
pub fn sample_mean(samples: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) {
        return Err(shape_err("sample buffer must hold at least one whole row"));
    }
    let rows = samples.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in samples.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    Ok(mean)
}

/// `f̂(x)`: mean of `count` draws from the model at `x`.
pub fn estimate_fhat<M: ConditionalModel + ?Sized>(model: &M, x: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(config_err("per-point sample count must be positive"));
    }
    let samples = model.sample(x, count, seed)?;
    sample_mean(&samples, model.response_dim())
}

/// `D* = {(X_i, Ŷ_{X_i})}`: original covariates, one fresh response per row.
pub fn make_bootstrap_dataset<M: ConditionalModel + ?Sized>(
    model: &M,
    covariates: &[f64],
    seed: u64,
) -> Result<RegressionDataset> {
    let dx = model.covariate_dim();
    if covariates.is_empty() || !covariates.len().is_multiple_of(dx) {
        return Err(shape_err("covariate matrix must be non-empty whole rows"));
    }
    let y = model.sample_rows(covariates, seed)?;
    RegressionDataset::new(dx, model.response_dim(), covariates.to_vec(), y)
}

/// `Ĥ(r) = #{v ≤ r} / len`.
pub fn empirical_cdf(values: &[f64], r: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(domain_err("empirical CDF of an empty sample"));
    }
    let below = values.iter().filter(|&&v| v <= r).count();
    Ok(below as f64 / values.len() as f64)
}

/// 1-based order-statistic index `⌈q·B⌉`, clamped to `[1, B]`.
///
/// Products such as `0.975 × 200` land a few ulps above the integer; a
/// 1e-9 slack keeps them on it.
pub(crate) fn order_index(q: f64, len: usize) -> usize {
    let k = (q * len as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(len)
}

/// Generalized inverse of the empirical CDF: the `⌈q·B⌉`-th smallest value.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(domain_err("quantile of an empty sample"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(domain_err(format!("quantile level {q} outside (0, 1)")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(domain_err("quantile of a sample containing NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(q, sorted.len()) - 1])
}

/// `[f̂ − Q(1 − α/2), f̂ − Q(α/2)]` from centered replicate statistics.
pub fn confidence_interval(f_hat: f64, centered: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain_err(format!("alpha {alpha} outside (0, 1)")));
    }
    let upper = quantile(centered, 1.0 - alpha / 2.0)?;
    let lower = quantile(centered, alpha / 2.0)?;
    Ok((f_hat - upper, f_hat - lower))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    /// Replicate count `B`.
    pub replicates: usize,
    pub alpha: f64,
    /// Draws per evaluation point for `f̂` and `f̂*`; `None` means `n`.
    pub per_x_samples: Option<usize>,
    /// Replicate training budget; `None` reuses the base configuration.
    pub replicate_train: Option<TrainConfig>,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            alpha: 0.05,
            per_x_samples: None,
            replicate_train: None,
            warm_start: false,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(config_err("bootstrap.replicates must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("bootstrap.alpha must lie in (0, 1)"));
        }
        if self.per_x_samples == Some(0) {
            return Err(config_err("bootstrap.per_x_samples must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub covariate_dim: usize,
    /// `points × d_X`, row-major.
    pub eval_points: Vec<f64>,
    pub f_hat: Vec<f64>,
    /// Indices of the replicates that completed, in order.
    pub replicate_ids: Vec<usize>,
    /// One row per completed replicate, one column per point.
    pub replicate_estimates: Vec<Vec<f64>>,
    /// `replicate_estimates − f_hat`, row-wise.
    pub centered_stats: Vec<Vec<f64>>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub alpha: f64,
    pub failures: Vec<ReplicateFailure>,
}

impl BootstrapResult {
    /// Assembles intervals from base and replicate estimates.
    pub fn from_estimates(
        covariate_dim: usize,
        eval_points: Vec<f64>,
        f_hat: Vec<f64>,
        replicate_ids: Vec<usize>,
        replicate_estimates: Vec<Vec<f64>>,
        alpha: f64,
        failures: Vec<ReplicateFailure>,
    ) -> Result<Self> {
        let points = f_hat.len();
        if eval_points.len() != points * covariate_dim {
            return Err(shape_err("evaluation points do not match the estimates"));
        }
        if replicate_estimates.iter().any(|r| r.len() != points) || replicate_ids.len() != replicate_estimates.len() {
            return Err(shape_err("replicate rows do not match the evaluation points"));
        }
        let centered_stats: Vec<Vec<f64>> = replicate_estimates
            .iter()
            .map(|row| row.iter().zip(&f_hat).map(|(r, f)| r - f).collect())
            .collect();
        let mut result = Self {
            covariate_dim,
            eval_points,
            f_hat,
            replicate_ids,
            replicate_estimates,
            centered_stats,
            ci_lo: Vec::new(),
            ci_hi: Vec::new(),
            alpha,
            failures,
        };
        let (lo, hi) = result.intervals(alpha)?;
        result.ci_lo = lo;
        result.ci_hi = hi;
        Ok(result)
    }

    pub fn n_points(&self) -> usize {
        self.f_hat.len()
    }

    pub fn n_replicates(&self) -> usize {
        self.replicate_estimates.len()
    }

    pub fn centered_at(&self, point: usize) -> Vec<f64> {
        self.centered_stats.iter().map(|row| row[point]).collect()
    }

    /// Intervals at another level from the same replicates.
    pub fn intervals(&self, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        (0..self.n_points())
            .map(|p| confidence_interval(self.f_hat[p], &self.centered_at(p), alpha))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    /// One row per point: `x1..xd[,f0],f_hat,ci_lo,ci_hi[,covered]`.
    ///
    /// The `f0` and `covered` columns are present only when `f0` is given.
    pub fn write_points_csv<W: Write>(&self, mut w: W, f0: Option<&[f64]>) -> Result<()> {
        if f0.is_some_and(|f| f.len() != self.n_points()) {
            return Err(shape_err("f0 values do not match the evaluation points"));
        }
        let mut header: Vec<String> = (1..=self.covariate_dim).map(|j| format!("x{j}")).collect();
        if f0.is_some() {
            header.push("f0".into());
        }
        header.extend(["f_hat", "ci_lo", "ci_hi"].map(String::from));
        if f0.is_some() {
            header.push("covered".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (p, x) in self.eval_points.chunks_exact(self.covariate_dim).enumerate() {
            let mut fields: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
            if let Some(f) = f0 {
                fields.push(fmt_f64(f[p]));
            }
            fields.extend([self.f_hat[p], self.ci_lo[p], self.ci_hi[p]].map(fmt_f64));
            if let Some(f) = f0 {
                let covered = self.ci_lo[p] <= f[p] && f[p] <= self.ci_hi[p];
                fields.push(u8::from(covered).to_string());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Replicate matrix: `replicate,p1..pN`, one row per completed replicate.
    pub fn write_replicates_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["replicate".to_string()];
        header.extend((1..=self.n_points()).map(|p| format!("p{p}")));
        writeln!(w, "{}", header.join(","))?;
        for (id, row) in self.replicate_ids.iter().zip(&self.replicate_estimates) {
            let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{id},{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn is_replicate_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Training(_) | Error::TrainingDiverged { .. } | Error::Sampling { .. }
    )
}

fn estimate_all<M: ConditionalModel + ?Sized>(
    model: &M,
    eval_points: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let dx = model.covariate_dim();
    eval_points
        .par_chunks(dx)
        .enumerate()
        .map(|(p, x)| {
            let mean = estimate_fhat(model, x, count, rng::derive_seed(seed, "point", p as u64))?;
            Ok(mean[0])
        })
        .collect()
}

/// Runs the full procedure with an arbitrary fitter.
///
/// Random streams are keyed by `(config.seed, stage, replicate index)`, so a
/// replicate can be reproduced in isolation and the result does not depend
/// on the thread count. Replicates whose training or sampling fails are
/// dropped and recorded; more than 10% failures abort the run.
pub fn run_bootstrap_with<F: Fitter>(
    data: &RegressionDataset,
    fitter: &F,
    config: &BootstrapConfig,
    eval_points: &[f64],
) -> Result<BootstrapResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(shape_err("bootstrap needs a non-empty dataset"));
    }
    if data.response_dim() != 1 {
        return Err(config_err("bootstrap intervals are defined for scalar responses"));
    }
    let dx = data.covariate_dim();
    if eval_points.is_empty() || !eval_points.len().is_multiple_of(dx) {
        return Err(shape_err("evaluation points must be non-empty whole rows"));
    }
    let per_x = config.per_x_samples.unwrap_or(data.len());
    let seed = config.seed;

    let base = fitter.fit(data, rng::derive_seed(seed, "base-fit", 0), FitStage::Base)?;
    let f_hat = estimate_all(&base, eval_points, per_x, rng::derive_seed(seed, "base-fhat", 0))?;

    let outcomes: Vec<Result<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let idx = b as u64;
            let boot = make_bootstrap_dataset(&base, data.covariates(), rng::derive_seed(seed, "replicate-data", idx))?;
            let stage = FitStage::Replicate {
                index: b,
                warm_start: config.warm_start.then_some(&base),
            };
            let model = fitter.fit(&boot, rng::derive_seed(seed, "replicate-fit", idx), stage)?;
            estimate_all(&model, eval_points, per_x, rng::derive_seed(seed, "replicate-fhat", idx))
        })
        .collect();

    let mut ids = Vec::new();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(row) => {
                ids.push(b);
                estimates.push(row);
            }
            Err(e) if is_replicate_failure(&e) => failures.push(ReplicateFailure {
                index: b,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if failures.len() * 10 > config.replicates || estimates.len() < 2 {
        return Err(Error::TooManyReplicateFailures {
            failed: failures.len(),
            total: config.replicates,
        });
    }
    BootstrapResult::from_estimates(dx, eval_points.to_vec(), f_hat, ids, estimates, config.alpha, failures)
}

/// Score-matching bootstrap: base model trained with `base_train`,
/// replicates with `config.replicate_train` (or the same budget).
pub fn run_bootstrap(
    data: &RegressionDataset,
    base_train: &TrainConfig,
    config: &BootstrapConfig,
    schedule: &DiffusionSchedule,
    hidden: &[usize],
    clip_bound: Option<f64>,
    eval_points: &[f64],
) -> Result<BootstrapResult> {
    let fitter = DiffusionFitter {
        base_train: base_train.clone(),
        replicate_train: config.replicate_train.clone().unwrap_or_else(|| base_train.clone()),
        schedule: schedule.clone(),
        hidden: hidden.to_vec(),
        clip_bound,
    };
    run_bootstrap_with(data, &fitter, config, eval_points)
}
