use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::loss::{dsm_loss_and_grad, DsmScratch};
use super::schedule::DiffusionSchedule;
use super::standardize::StandardizationState;
use crate::data::RegressionDataset;
use crate::error::{config_err, shape_err, Error, Result};
use crate::mlp::{adam_step, AdamState, Gradients, MlpScoreNet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Fixed `(t_j, z_j)` draws shared by all rows; epochs sweep the `n × m`
    /// pairs of the empirical risk.
    StrictErm,
    /// Fresh `(t, z)` per row on every visit.
    Stochastic,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::StrictErm => "strict-erm",
            TrainMode::Stochastic => "stochastic",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "strict-erm" => Ok(TrainMode::StrictErm),
            "stochastic" => Ok(TrainMode::Stochastic),
            other => Err(config_err(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub mode: TrainMode,
    /// Number of `(t, z)` draws in strict mode.
    pub draws: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop once the loss improved by less than 1% over the last 5 epochs.
    pub early_stop: bool,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            mode: TrainMode::Stochastic,
            draws: 16,
            learning_rate: 1e-3,
            seed: 0,
            early_stop: false,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("train.epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size must be positive"));
        }
        if self.mode == TrainMode::StrictErm && self.draws == 0 {
            return Err(config_err("train.m must be positive in strict-erm mode"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("train.lr must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpScoreNet,
    pub standardization: StandardizationState,
    /// Mean minibatch loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// `[1 + d_Y + d_X, hidden…, d_Y]`.
pub fn net_layer_sizes(covariate_dim: usize, response_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = vec![1 + response_dim + covariate_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(response_dim);
    sizes
}

/// Fits the score network from a fresh He initialization.
pub fn train_score(
    data: &RegressionDataset,
    config: &TrainConfig,
    schedule: &DiffusionSchedule,
    hidden: &[usize],
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(shape_err("training set is empty"));
    }
    let sizes = net_layer_sizes(data.covariate_dim(), data.response_dim(), hidden);
    let net = MlpScoreNet::init(&sizes, rng::derive_seed(config.seed, "init", 0))?;
    let standardization = if config.standardize {
        StandardizationState::fit(data)?
    } else {
        StandardizationState::identity(data.covariate_dim(), data.response_dim())
    };
    train_score_from(data, config, schedule, net, standardization)
}

/// Continues training `net`, with data mapped through `standardization`.
pub fn train_score_from(
    data: &RegressionDataset,
    config: &TrainConfig,
    schedule: &DiffusionSchedule,
    mut net: MlpScoreNet,
    standardization: StandardizationState,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(shape_err("training set is empty"));
    }
    let (dx, dy) = (data.covariate_dim(), data.response_dim());
    if net.input_dim() != 1 + dx + dy || net.output_dim() != dy {
        return Err(shape_err("network does not match the dataset dimensions"));
    }
    if standardization.covariate_dim() != dx || standardization.response_dim() != dy {
        return Err(shape_err("standardization does not match the dataset dimensions"));
    }
    let work = standardization.apply(data)?;
    let n = work.len();
    let lo = schedule.truncation();
    let hi = 1.0 - lo;
    let batch_size = config.batch_size.min(n);

    let mut adam = AdamState::new(&net, config.learning_rate);
    let mut grads = Gradients::zeros_like(&net);
    let mut scratch = DsmScratch::default();
    let mut rng = rng::substream(config.seed, "minibatch", 0);

    let (fixed_t, fixed_z) = match config.mode {
        TrainMode::StrictErm => {
            let mut draws = rng::substream(config.seed, "erm-draws", 0);
            let t: Vec<f64> = (0..config.draws).map(|_| draws.random_range(lo..=hi)).collect();
            let z: Vec<f64> = (0..config.draws * dy).map(|_| draws.sample(StandardNormal)).collect();
            (t, z)
        }
        TrainMode::Stochastic => (Vec::new(), Vec::new()),
    };
    let units = match config.mode {
        TrainMode::StrictErm => n * config.draws,
        TrainMode::Stochastic => n,
    };
    let mut order: Vec<usize> = (0..units).collect();

    let mut bx = Vec::with_capacity(batch_size * dx);
    let mut by = Vec::with_capacity(batch_size * dy);
    let mut bt = Vec::with_capacity(batch_size);
    let mut bz = Vec::with_capacity(batch_size * dy);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            bx.clear();
            by.clear();
            bt.clear();
            bz.clear();
            for &u in chunk {
                let i = u % n;
                bx.extend_from_slice(work.x_row(i));
                by.extend_from_slice(work.y_row(i));
                match config.mode {
                    TrainMode::StrictErm => {
                        let j = u / n;
                        bt.push(fixed_t[j]);
                        bz.extend_from_slice(&fixed_z[j * dy..(j + 1) * dy]);
                    }
                    TrainMode::Stochastic => {
                        bt.push(rng.random_range(lo..=hi));
                        bz.extend((0..dy).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    }
                }
            }
            let loss = dsm_loss_and_grad(&net, &bx, &by, &bt, &bz, &mut scratch, Some(&mut grads));
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            epoch_sum += loss * chunk.len() as f64;
            adam_step(&mut net, &grads, &mut adam).map_err(|e| Error::TrainingDiverged {
                epoch,
                reason: e.to_string(),
            })?;
        }
        trace.push(epoch_sum / units as f64);
        if config.early_stop && plateaued(&trace) {
            break;
        }
    }
    if !net.all_finite() {
        return Err(Error::TrainingDiverged {
            epoch: trace.len().saturating_sub(1),
            reason: "non-finite parameters".into(),
        });
    }
    Ok(TrainOutcome {
        net,
        standardization,
        loss_trace: trace,
    })
}

fn plateaued(trace: &[f64]) -> bool {
    const WINDOW: usize = 5;
    if trace.len() <= WINDOW {
        return false;
    }
    let now = trace[trace.len() - 1];
    let before = trace[trace.len() - 1 - WINDOW];
    (before - now) < 0.01 * before.abs()
}
