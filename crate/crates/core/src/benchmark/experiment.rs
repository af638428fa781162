use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::bootstrap::{run_bootstrap_with, BootstrapConfig, BootstrapResult, DiffusionFitter, Fitter};
use crate::config::{join_list, parse_bool, parse_usize_list, FlatConfig};
use crate::diffusion::{build_schedule, DiffusionSchedule, GridKind, TrainConfig, TrainMode};
use crate::error::{config_err, Result};
use crate::rng;

use super::metrics::{compute_metrics, MetricsReport};
use super::targets::{generate_covariates, generate_dataset, SyntheticTarget, TargetId};

/// Named starting points for [`ExperimentConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full-size run: test 2500, the per-target ratio and widths, `B = 200`.
    Table2,
    /// Train 2000, test 200, `B = 50`, 500 draws per point.
    Desk,
    /// Structural smoke run: train 200, `B = 2`, one epoch.
    DryRun,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Table2 => "table2",
            Profile::Desk => "desk",
            Profile::DryRun => "dry-run",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "table2" => Ok(Profile::Table2),
            "desk" => Ok(Profile::Desk),
            "dry-run" => Ok(Profile::DryRun),
            other => Err(config_err(format!("unknown profile {other:?} (expected table2, desk or dry-run)"))),
        }
    }
}

/// Test-set ratio and hidden widths used for each target at full size.
pub fn table2_shape(target: TargetId) -> (f64, Vec<usize>) {
    match target {
        TargetId::D5I => (0.02, vec![48, 48]),
        TargetId::D5II => (0.02, vec![56, 56]),
        TargetId::D10I => (0.025, vec![48, 48]),
        TargetId::D10II => (0.0125, vec![56, 56]),
        TargetId::D10III => (0.0125, vec![64, 64]),
    }
}

/// Everything needed to reproduce one benchmark run from its master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub target: TargetId,
    pub test_size: usize,
    /// `test / (train + test)`; ignored when `train_size` is set.
    pub test_ratio: f64,
    pub train_size: Option<usize>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub truncation: f64,
    pub steps: usize,
    pub grid: GridKind,
    /// Base-model training; its seed is replaced by a derived one.
    pub train: TrainConfig,
    pub replicate_epochs: Option<usize>,
    pub clip_bound: Option<f64>,
    pub replicates: usize,
    pub alpha: f64,
    pub per_x_samples: Option<usize>,
    pub warm_start: bool,
}

pub const EXPERIMENT_KEYS: &[&str] = &[
    "experiment.target",
    "experiment.test_size",
    "experiment.test_ratio",
    "experiment.train_size",
    "experiment.seed",
    "net.hidden",
    "diffusion.T",
    "diffusion.K",
    "diffusion.grid",
    "diffusion.standardize",
    "train.epochs",
    "train.batch_size",
    "train.mode",
    "train.m",
    "train.lr",
    "train.early_stop",
    "sampler.clip_bound",
    "bootstrap.replicates",
    "bootstrap.alpha",
    "bootstrap.per_x_samples",
    "bootstrap.replicate_epochs",
    "bootstrap.warm_start",
];

impl ExperimentConfig {
    pub fn profile(profile: Profile, target: TargetId) -> Self {
        let (ratio, hidden) = table2_shape(target);
        let base = Self {
            target,
            test_size: 2500,
            test_ratio: ratio,
            train_size: None,
            seed: 0,
            hidden,
            truncation: 0.002,
            steps: 200,
            grid: GridKind::Uniform,
            train: TrainConfig {
                early_stop: true,
                ..TrainConfig::default()
            },
            replicate_epochs: None,
            clip_bound: None,
            replicates: 200,
            alpha: 0.05,
            per_x_samples: None,
            warm_start: false,
        };
        match profile {
            Profile::Table2 => base,
            Profile::Desk => Self {
                test_size: 200,
                train_size: Some(2000),
                replicates: 50,
                per_x_samples: Some(500),
                train: TrainConfig {
                    epochs: 1500,
                    batch_size: 512,
                    learning_rate: 5e-4,
                    ..TrainConfig::default()
                },
                ..base
            },
            Profile::DryRun => Self {
                test_size: 20,
                train_size: Some(200),
                replicates: 2,
                per_x_samples: Some(50),
                steps: 50,
                train: TrainConfig {
                    epochs: 1,
                    ..TrainConfig::default()
                },
                ..base
            },
        }
    }

    /// `round(test · (1 − ratio) / ratio)` unless given explicitly.
    pub fn resolved_train_size(&self) -> usize {
        self.train_size
            .unwrap_or_else(|| (self.test_size as f64 * (1.0 - self.test_ratio) / self.test_ratio).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_size == 0 {
            return Err(config_err("experiment.test_size must be positive"));
        }
        if self.train_size.is_none() && !(self.test_ratio > 0.0 && self.test_ratio < 1.0) {
            return Err(config_err("experiment.test_ratio must lie in (0, 1)"));
        }
        if self.resolved_train_size() == 0 {
            return Err(config_err("training set would be empty"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(config_err("net.hidden needs at least one positive width"));
        }
        self.train.validate()?;
        self.bootstrap_config().validate()?;
        build_schedule(self.truncation, self.steps, self.grid)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        build_schedule(self.truncation, self.steps, self.grid)
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            alpha: self.alpha,
            per_x_samples: self.per_x_samples,
            replicate_train: self.replicate_epochs.map(|epochs| TrainConfig {
                epochs,
                ..self.train.clone()
            }),
            warm_start: self.warm_start,
            seed: self.stage_seed("bootstrap"),
        }
    }

    pub fn fitter(&self) -> Result<DiffusionFitter> {
        let cfg = self.bootstrap_config();
        Ok(DiffusionFitter {
            base_train: self.train.clone(),
            replicate_train: cfg.replicate_train.unwrap_or_else(|| self.train.clone()),
            schedule: self.schedule()?,
            hidden: self.hidden.clone(),
            clip_bound: self.clip_bound,
        })
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        rng::derive_seed(self.seed, stage, 0)
    }

    /// Named seeds of every stage, in execution order.
    pub fn stage_seeds(&self) -> Vec<(&'static str, u64)> {
        ["target-params", "train-data", "test-covariates", "bootstrap"]
            .into_iter()
            .map(|s| (s, self.stage_seed(s)))
            .collect()
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = FlatConfig::new();
        c.set("experiment.target", self.target);
        c.set("experiment.test_size", self.test_size);
        c.set("experiment.test_ratio", self.test_ratio);
        if let Some(n) = self.train_size {
            c.set("experiment.train_size", n);
        }
        c.set("experiment.seed", self.seed);
        c.set("net.hidden", join_list(&self.hidden));
        c.set("diffusion.T", self.truncation);
        c.set("diffusion.K", self.steps);
        c.set("diffusion.grid", self.grid.as_str());
        c.set("diffusion.standardize", self.train.standardize);
        c.set("train.epochs", self.train.epochs);
        c.set("train.batch_size", self.train.batch_size);
        c.set("train.mode", self.train.mode.as_str());
        c.set("train.m", self.train.draws);
        c.set("train.lr", self.train.learning_rate);
        c.set("train.early_stop", self.train.early_stop);
        if let Some(b) = self.clip_bound {
            c.set("sampler.clip_bound", b);
        }
        c.set("bootstrap.replicates", self.replicates);
        c.set("bootstrap.alpha", self.alpha);
        if let Some(j) = self.per_x_samples {
            c.set("bootstrap.per_x_samples", j);
        }
        if let Some(e) = self.replicate_epochs {
            c.set("bootstrap.replicate_epochs", e);
        }
        c.set("bootstrap.warm_start", self.warm_start);
        c
    }

    /// Applies the experiment keys present in `flat` on top of `self`.
    ///
    /// Keys outside the experiment namespace are left for the caller to
    /// check; use [`FlatConfig::check_known`] first for strictness.
    pub fn apply(&mut self, flat: &FlatConfig) -> Result<()> {
        if let Some(v) = flat.parsed::<TargetId>("experiment.target")? {
            if v != self.target {
                let (ratio, hidden) = table2_shape(v);
                self.test_ratio = ratio;
                self.hidden = hidden;
            }
            self.target = v;
        }
        if let Some(v) = flat.parsed("experiment.test_size")? {
            self.test_size = v;
        }
        if let Some(v) = flat.parsed("experiment.test_ratio")? {
            self.test_ratio = v;
        }
        if let Some(v) = flat.parsed("experiment.train_size")? {
            self.train_size = Some(v);
        }
        if let Some(v) = flat.parsed("experiment.seed")? {
            self.seed = v;
        }
        if let Some(v) = flat.get("net.hidden") {
            self.hidden = parse_usize_list(v)?;
        }
        if let Some(v) = flat.parsed("diffusion.T")? {
            self.truncation = v;
        }
        if let Some(v) = flat.parsed("diffusion.K")? {
            self.steps = v;
        }
        if let Some(v) = flat.parsed::<GridKind>("diffusion.grid")? {
            self.grid = v;
        }
        if let Some(v) = flat.get("diffusion.standardize") {
            self.train.standardize = parse_bool(v)?;
        }
        if let Some(v) = flat.parsed("train.epochs")? {
            self.train.epochs = v;
        }
        if let Some(v) = flat.parsed("train.batch_size")? {
            self.train.batch_size = v;
        }
        if let Some(v) = flat.parsed::<TrainMode>("train.mode")? {
            self.train.mode = v;
        }
        if let Some(v) = flat.parsed("train.m")? {
            self.train.draws = v;
        }
        if let Some(v) = flat.parsed("train.lr")? {
            self.train.learning_rate = v;
        }
        if let Some(v) = flat.get("train.early_stop") {
            self.train.early_stop = parse_bool(v)?;
        }
        if let Some(v) = flat.parsed("sampler.clip_bound")? {
            self.clip_bound = Some(v);
        }
        if let Some(v) = flat.parsed("bootstrap.replicates")? {
            self.replicates = v;
        }
        if let Some(v) = flat.parsed("bootstrap.alpha")? {
            self.alpha = v;
        }
        if let Some(v) = flat.parsed("bootstrap.per_x_samples")? {
            self.per_x_samples = Some(v);
        }
        if let Some(v) = flat.parsed("bootstrap.replicate_epochs")? {
            self.replicate_epochs = Some(v);
        }
        if let Some(v) = flat.get("bootstrap.warm_start") {
            self.warm_start = parse_bool(v)?;
        }
        Ok(())
    }

    /// Strict parse: every key must be an experiment key.
    pub fn from_flat(base: Self, flat: &FlatConfig) -> Result<Self> {
        flat.check_known(EXPERIMENT_KEYS)?;
        let mut cfg = base;
        cfg.apply(flat)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub target: SyntheticTarget,
    pub train_size: usize,
    /// `f0` at each test point.
    pub f0: Vec<f64>,
    pub result: BootstrapResult,
    pub metrics: MetricsReport,
    pub schedule_warnings: Vec<String>,
}

/// Generates train/test data, bootstraps at every test covariate and scores
/// the intervals against the known regression function.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    run_experiment_with(config, &config.fitter()?)
}

/// As [`run_experiment`] with a caller-supplied fitter in place of the
/// score-matching one; the config's training fields are then unused.
pub fn run_experiment_with<F: Fitter>(config: &ExperimentConfig, fitter: &F) -> Result<ExperimentOutcome> {
    config.validate()?;
    let target = SyntheticTarget::new(config.target, config.stage_seed("target-params"));
    let train_size = config.resolved_train_size();
    let train = generate_dataset(&target, train_size, config.stage_seed("train-data"))?;
    let test_x = generate_covariates(&target, config.test_size, config.stage_seed("test-covariates"));
    let f0: Vec<f64> = test_x.chunks_exact(target.covariate_dim()).map(|x| target.f0(x)).collect();
    let result = run_bootstrap_with(&train, fitter, &config.bootstrap_config(), &test_x)?;
    let metrics = compute_metrics(&result, &f0)?;
    Ok(ExperimentOutcome {
        config: config.clone(),
        target,
        train_size,
        f0,
        result,
        metrics,
        schedule_warnings: config.schedule()?.lint(),
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `key = value` lines describing the run's results.
pub fn summary_text(outcome: &ExperimentOutcome) -> String {
    let m = &outcome.metrics;
    let r = &outcome.result;
    let lengths: Vec<f64> = r.ci_hi.iter().zip(&r.ci_lo).map(|(h, l)| h - l).collect();
    let mut s = FlatConfig::new();
    s.set("summary.target", outcome.config.target);
    s.set("summary.seed", outcome.config.seed);
    s.set("summary.n_train", outcome.train_size);
    s.set("summary.n_test", m.n_test);
    s.set("summary.replicates_requested", outcome.config.replicates);
    s.set("summary.replicates_completed", r.n_replicates());
    s.set("summary.replicates_failed", r.failures.len());
    let failed: Vec<usize> = r.failures.iter().map(|f| f.index).collect();
    s.set("summary.failed_replicate_ids", join_list(&failed));
    s.set("summary.alpha", r.alpha);
    s.set("summary.covered", m.covered_count());
    s.set("summary.cp", m.cp);
    s.set("summary.mse_org", m.mse_org);
    s.set("summary.mse_b", m.mse_b);
    s.set("summary.interval_length", m.interval_length);
    s.set("summary.median_interval_length", median(&lengths));
    if let Some((w, b)) = outcome.target.linear_coefficients() {
        s.set("target.weights", join_list(w));
        s.set("target.bias", b);
    }
    for (i, w) in outcome.schedule_warnings.iter().enumerate() {
        s.set(format!("warning.{i}"), w);
    }
    s.to_text()
}

/// Writes `summary.txt`, `points.csv`, `replicates.csv` and
/// `config.snapshot` into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.txt"), summary_text(outcome))?;
    fs::write(dir.join("config.snapshot"), outcome.config.to_flat().to_text())?;
    outcome
        .result
        .write_points_csv(BufWriter::new(fs::File::create(dir.join("points.csv"))?), Some(&outcome.f0))?;
    outcome
        .result
        .write_replicates_csv(BufWriter::new(fs::File::create(dir.join("replicates.csv"))?))?;
    Ok(())
}
