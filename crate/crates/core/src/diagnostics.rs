//! Analytic oracles and distributional checks.
//!
//! When `Y | X = x ~ N(f0(x), 1)` the forward marginal at time `t` is
//! `N(m_t f0(x), m_t² + σ_t²) = N(m_t f0(x), 1)`, so the true score is
//! `m_t f0(x) − y`. Plugging it into the sampler isolates discretization
//! error from training error.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::benchmark::{generate_covariates, generate_dataset, SyntheticTarget};
use crate::bootstrap::{run_bootstrap_with, BootstrapConfig, ConditionalModel, FitStage, Fitter};
use crate::data::{fmt_f64, RegressionDataset};
use crate::diffusion::{ei_sample, mean_coef, DiffusionSchedule, SamplerConfig, ScoreField, ScoreScratch};
use crate::error::{config_err, domain_err, shape_err, Result};
use crate::rng;

type RegressionFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Exact score of `Y | X = x ~ N(f0(x), 1)` under the VP forward process.
#[derive(Clone)]
pub struct AnalyticGaussianScore {
    covariate_dim: usize,
    f0: RegressionFn,
}

impl fmt::Debug for AnalyticGaussianScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticGaussianScore")
            .field("covariate_dim", &self.covariate_dim)
            .finish_non_exhaustive()
    }
}

impl AnalyticGaussianScore {
    pub fn new(covariate_dim: usize, f0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            covariate_dim,
            f0: Arc::new(f0),
        }
    }

    pub fn for_target(target: &SyntheticTarget) -> Self {
        let t = target.clone();
        Self::new(target.covariate_dim(), move |x| t.f0(x))
    }

    pub fn f0(&self, x: &[f64]) -> f64 {
        (self.f0)(x)
    }
}

/// `m_t f0(x) − y`.
pub fn analytic_score(oracle: &AnalyticGaussianScore, t: f64, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(domain_err(format!("time {t} outside [0, 1]")));
    }
    if x.len() != oracle.covariate_dim || y.len() != 1 {
        return Err(shape_err("analytic score expects a scalar response"));
    }
    Ok(vec![mean_coef(t) * oracle.f0(x) - y[0]])
}

impl ScoreField for AnalyticGaussianScore {
    fn response_dim(&self) -> usize {
        1
    }

    fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    fn prepared_dim(&self) -> usize {
        1
    }

    fn prepare_covariate(&self, x: &[f64]) -> Vec<f64> {
        vec![self.f0(x)]
    }

    fn score_rows(&self, t: f64, ys: &[f64], xs: &[f64], out: &mut [f64], _scratch: &mut ScoreScratch) {
        let m = mean_coef(t);
        for ((o, y), f) in out.iter_mut().zip(ys).zip(xs) {
            *o = m * f - y;
        }
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(domain_err("Wasserstein distance of an empty sample"));
    }
    if a.len() != b.len() {
        return Err(shape_err("Wasserstein samples must have equal size"));
    }
    Ok(())
}

/// Empirical `W1` between equal-size samples: mean gap of sorted pairs.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (a, b) = (sorted(a), sorted(b));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Empirical `W2` between equal-size samples.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (a, b) = (sorted(a), sorted(b));
    Ok((a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

/// `count` exact draws from `N(mean, 1)`.
pub fn exact_draws(mean: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    (0..count).map(|_| mean + r.sample::<f64, _>(StandardNormal)).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub x: Vec<f64>,
    pub f0: f64,
    pub mean: f64,
    pub variance: f64,
    /// `|mean − f0(x)|`
    pub mean_error: f64,
    /// `|variance − 1|`
    pub variance_error: f64,
    pub w1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOracleReport {
    pub steps: usize,
    pub sample_count: usize,
    pub probes: Vec<ProbeReport>,
}

impl SamplerOracleReport {
    pub fn max_mean_error(&self) -> f64 {
        self.probes.iter().map(|p| p.mean_error).fold(0.0, f64::max)
    }

    pub fn max_variance_error(&self) -> f64 {
        self.probes.iter().map(|p| p.variance_error).fold(0.0, f64::max)
    }

    pub fn max_w1(&self) -> f64 {
        self.probes.iter().map(|p| p.w1).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dx = self.probes.first().map_or(0, |p| p.x.len());
        let mut header: Vec<String> = (1..=dx).map(|j| format!("x{j}")).collect();
        header.extend(["f0", "mean", "variance", "mean_error", "variance_error", "w1"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for p in &self.probes {
            let mut fields: Vec<String> = p.x.iter().map(|&v| fmt_f64(v)).collect();
            fields.extend([p.f0, p.mean, p.variance, p.mean_error, p.variance_error, p.w1].map(fmt_f64));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Samples with the analytic score at each probe and compares against
/// `sample_count` exact `N(f0(x), 1)` draws.
pub fn sampler_oracle_report(
    target: &SyntheticTarget,
    schedule: &DiffusionSchedule,
    probe_points: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<SamplerOracleReport> {
    let dx = target.covariate_dim();
    if probe_points.is_empty() || !probe_points.len().is_multiple_of(dx) {
        return Err(shape_err("probe points must be non-empty whole rows"));
    }
    if sample_count < 2 {
        return Err(config_err("oracle report needs at least two samples per probe"));
    }
    let oracle = AnalyticGaussianScore::for_target(target);
    let probes = probe_points
        .par_chunks(dx)
        .enumerate()
        .map(|(p, x)| {
            let cfg = SamplerConfig {
                sample_count,
                clip_bound: None,
                seed: rng::derive_seed(seed, "oracle-samples", p as u64),
            };
            let drawn = ei_sample(&oracle, x, schedule, &cfg)?;
            let f0 = target.f0(x);
            let exact = exact_draws(f0, sample_count, rng::derive_seed(seed, "exact-draws", p as u64));
            let (mean, variance) = mean_var(&drawn);
            Ok(ProbeReport {
                x: x.to_vec(),
                f0,
                mean,
                variance,
                mean_error: (mean - f0).abs(),
                variance_error: (variance - 1.0).abs(),
                w1: wasserstein1_1d(&drawn, &exact)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplerOracleReport {
        steps: schedule.steps(),
        sample_count,
        probes,
    })
}

/// Sampler driven by the analytic score of a known target, optionally
/// shifted by a constant.
#[derive(Debug, Clone)]
pub struct AnalyticModel {
    pub score: AnalyticGaussianScore,
    pub schedule: DiffusionSchedule,
}

impl ConditionalModel for AnalyticModel {
    fn response_dim(&self) -> usize {
        1
    }

    fn covariate_dim(&self) -> usize {
        self.score.covariate_dim
    }

    fn sample(&self, x: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
        let cfg = SamplerConfig {
            sample_count: count,
            clip_bound: None,
            seed,
        };
        ei_sample(&self.score, x, &self.schedule, &cfg)
    }

    fn sample_rows(&self, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::stream(seed);
        crate::diffusion::ei_sample_rows(&self.score, xs, &self.schedule, None, &mut r)
    }
}

/// Ignores the data and returns the exact-score sampler: the floor any
/// trained model is measured against.
#[derive(Debug, Clone)]
pub struct OracleFitter {
    pub target: SyntheticTarget,
    pub schedule: DiffusionSchedule,
}

impl Fitter for OracleFitter {
    type Model = AnalyticModel;

    fn fit(&self, _data: &RegressionDataset, _seed: u64, _stage: FitStage<'_, AnalyticModel>) -> Result<AnalyticModel> {
        Ok(AnalyticModel {
            score: AnalyticGaussianScore::for_target(&self.target),
            schedule: self.schedule.clone(),
        })
    }
}

/// `N(f0(x) + c, 1)` with `c` the mean residual of the training data.
///
/// Per-point draws come in antithetic pairs, so the sample mean is exactly
/// `f0(x) + c` and bootstrap intervals are driven by `c` alone.
#[derive(Debug, Clone)]
pub struct ShiftedTruthModel {
    pub target: SyntheticTarget,
    pub shift: f64,
}

impl ConditionalModel for ShiftedTruthModel {
    fn response_dim(&self) -> usize {
        1
    }

    fn covariate_dim(&self) -> usize {
        self.target.covariate_dim()
    }

    fn sample(&self, x: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
        let center = self.target.eval_f0(x)? + self.shift;
        let mut r = rng::stream(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() + 1 < count {
            let z: f64 = r.sample(StandardNormal);
            out.push(center + z);
            out.push(center - z);
        }
        if out.len() < count {
            out.push(center);
        }
        Ok(out)
    }

    fn sample_rows(&self, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::stream(seed);
        Ok(xs
            .chunks_exact(self.covariate_dim())
            .map(|x| self.target.f0(x) + self.shift + r.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct ShiftedTruthFitter {
    pub target: SyntheticTarget,
}

impl Fitter for ShiftedTruthFitter {
    type Model = ShiftedTruthModel;

    fn fit(&self, data: &RegressionDataset, _seed: u64, _stage: FitStage<'_, ShiftedTruthModel>) -> Result<ShiftedTruthModel> {
        let n = data.len() as f64;
        let shift = (0..data.len())
            .map(|i| data.y_row(i)[0] - self.target.f0(data.x_row(i)))
            .sum::<f64>()
            / n;
        Ok(ShiftedTruthModel {
            target: self.target.clone(),
            shift,
        })
    }
}

/// Probe design and sample sizes shared by the trend probes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendConfig {
    pub seeds: usize,
    pub probe_count: usize,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub median_w1: f64,
    pub iqr_w1: f64,
    /// Probe-averaged `W1` for each seed.
    pub per_seed: Vec<f64>,
}

fn check_grid(n_grid: &[usize], min_len: usize) -> Result<()> {
    if n_grid.len() < min_len {
        return Err(config_err(format!("trend grid needs at least {min_len} sizes")));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("trend grid must be positive and strictly increasing"));
    }
    Ok(())
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    quartile(values, 0.5)
}

/// Linear-interpolated quantile of a non-empty slice.
fn quartile(values: &[f64], q: f64) -> f64 {
    let s = sorted(values);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

pub fn iqr(values: &[f64]) -> f64 {
    quartile(values, 0.75) - quartile(values, 0.25)
}

/// Probe-averaged `W1` between `model` and the truth.
pub fn model_w1<M: ConditionalModel>(
    model: &M,
    target: &SyntheticTarget,
    probes: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    let dx = target.covariate_dim();
    let dists = probes
        .chunks_exact(dx)
        .enumerate()
        .map(|(p, x)| {
            let drawn = model.sample(x, sample_count, rng::derive_seed(seed, "model-samples", p as u64))?;
            let exact = exact_draws(target.f0(x), sample_count, rng::derive_seed(seed, "exact-draws", p as u64));
            wasserstein1_1d(&drawn, &exact)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// For each training size, fits `cfg.seeds` models on fresh data and
/// reports the median and IQR of their `W1` to the truth.
///
/// Probe covariates are fixed across sizes and seeds.
pub fn convergence_trend<F: Fitter>(
    target: &SyntheticTarget,
    fitter: &F,
    n_grid: &[usize],
    cfg: &TrendConfig,
) -> Result<Vec<ConvergenceRow>> {
    check_grid(n_grid, 1)?;
    if cfg.seeds == 0 || cfg.probe_count == 0 || cfg.sample_count == 0 {
        return Err(config_err("trend needs positive seeds, probes and samples"));
    }
    let probes = generate_covariates(target, cfg.probe_count, rng::derive_seed(cfg.seed, "trend-probes", 0));
    n_grid
        .iter()
        .map(|&n| {
            let per_seed = (0..cfg.seeds)
                .into_par_iter()
                .map(|s| {
                    let key = rng::derive_seed(cfg.seed, "trend-size", n as u64);
                    let data = generate_dataset(target, n, rng::derive_seed(key, "data", s as u64))?;
                    let model = fitter.fit(&data, rng::derive_seed(key, "fit", s as u64), FitStage::Base)?;
                    model_w1(&model, target, &probes, cfg.sample_count, rng::derive_seed(key, "w1", s as u64))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ConvergenceRow {
                n,
                median_w1: median(&per_seed),
                iqr_w1: iqr(&per_seed),
                per_seed,
            })
        })
        .collect()
}

pub fn write_convergence_csv<W: Write>(mut w: W, rows: &[ConvergenceRow]) -> Result<()> {
    writeln!(w, "n,median_w1,iqr_w1")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.n, fmt_f64(r.median_w1), fmt_f64(r.iqr_w1))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub n: usize,
    /// Median coverage over seeds.
    pub cp: f64,
    /// Median over seeds of `|CP − (1 − α)|`.
    pub abs_gap: f64,
    pub per_seed_cp: Vec<f64>,
}

/// Runs the bootstrap at each training size over a fixed test grid of
/// `cfg.probe_count` covariates and reports coverage of `f0`.
///
/// `bootstrap.seed` is ignored; each `(n, seed)` cell gets its own stream.
pub fn coverage_trend<F: Fitter>(
    target: &SyntheticTarget,
    fitter: &F,
    n_grid: &[usize],
    bootstrap: &BootstrapConfig,
    cfg: &TrendConfig,
) -> Result<Vec<CoverageRow>> {
    check_grid(n_grid, 1)?;
    if cfg.seeds == 0 || cfg.probe_count == 0 {
        return Err(config_err("trend needs positive seeds and test points"));
    }
    let test_x = generate_covariates(target, cfg.probe_count, rng::derive_seed(cfg.seed, "coverage-test", 0));
    let f0: Vec<f64> = test_x.chunks_exact(target.covariate_dim()).map(|x| target.f0(x)).collect();
    let level = 1.0 - bootstrap.alpha;
    n_grid
        .iter()
        .map(|&n| {
            let key = rng::derive_seed(cfg.seed, "coverage-size", n as u64);
            let per_seed_cp = (0..cfg.seeds)
                .map(|s| {
                    let data = generate_dataset(target, n, rng::derive_seed(key, "data", s as u64))?;
                    let boot = BootstrapConfig {
                        seed: rng::derive_seed(key, "bootstrap", s as u64),
                        ..bootstrap.clone()
                    };
                    let result = run_bootstrap_with(&data, fitter, &boot, &test_x)?;
                    let covered = (0..f0.len())
                        .filter(|&p| result.ci_lo[p] <= f0[p] && f0[p] <= result.ci_hi[p])
                        .count();
                    Ok(covered as f64 / f0.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let gaps: Vec<f64> = per_seed_cp.iter().map(|cp| (cp - level).abs()).collect();
            Ok(CoverageRow {
                n,
                cp: median(&per_seed_cp),
                abs_gap: median(&gaps),
                per_seed_cp,
            })
        })
        .collect()
}

pub fn write_coverage_csv<W: Write>(mut w: W, rows: &[CoverageRow]) -> Result<()> {
    writeln!(w, "n,cp,abs_gap")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.n, fmt_f64(r.cp), fmt_f64(r.abs_gap))?;
    }
    Ok(())
}

/// Coverage the injected-truth pipeline attains in expectation:
/// `(⌈B(1 − α/2)⌉ − ⌈Bα/2⌉) / (B + 1)`.
pub fn injected_truth_coverage(replicates: usize, alpha: f64) -> f64 {
    let b = replicates as f64;
    let k_lo = crate::bootstrap::order_index(alpha / 2.0, replicates);
    let k_hi = crate::bootstrap::order_index(1.0 - alpha / 2.0, replicates);
    (k_hi - k_lo) as f64 / (b + 1.0)
}
