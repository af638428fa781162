use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use diffboot_core::benchmark::{
    run_experiment, write_artifacts, ExperimentConfig, Profile, SyntheticTarget, TargetId, EXPERIMENT_KEYS,
};
use diffboot_core::bootstrap::run_bootstrap;
use diffboot_core::checkpoint::{self, Checkpoint};
use diffboot_core::config::{join_list, parse_bool, parse_f64_list, parse_usize_list, FlatConfig};
use diffboot_core::data::{fmt_f64, read_covariates_csv, RegressionDataset};
use diffboot_core::diagnostics::{
    convergence_trend, coverage_trend, sampler_oracle_report, write_convergence_csv, write_coverage_csv,
    AnalyticGaussianScore, OracleFitter, TrendConfig,
};
use diffboot_core::diffusion::{ei_sample, train_score, NetScore, SamplerConfig, ScoreField};
use diffboot_core::rng::derive_seed;

use crate::{BenchmarkArgs, BootstrapArgs, DiagnoseArgs, GenerateArgs, ModelFlags, SampleArgs, TrainArgs};

pub type StageSeeds = Vec<(String, u64)>;

pub trait Run {
    fn known_keys(&self) -> Vec<&'static str>;

    /// Built-in values; may depend on explicitly chosen keys such as a profile.
    fn defaults(&self, explicit: &FlatConfig) -> Result<FlatConfig>;

    /// Command-line flags as config keys.
    fn flags(&self) -> FlatConfig;

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()>;
}

/// defaults < `--config` file < flags.
pub fn resolve(run: &dyn Run, config: Option<&Path>, seed: Option<u64>) -> Result<FlatConfig> {
    let known = run.known_keys();
    let mut explicit = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            FlatConfig::parse(&text)?
        }
        None => FlatConfig::new(),
    };
    explicit.check_known(&known)?;
    explicit.merge(&run.flags());
    if let Some(s) = seed {
        explicit.set("experiment.seed", s);
    }
    let mut resolved = run.defaults(&explicit)?;
    resolved.merge(&explicit);
    resolved.check_known(&known)?;
    Ok(resolved)
}

const MODEL_KEYS: &[&str] = &[
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
];

const BOOTSTRAP_KEYS: &[&str] = &[
    "bootstrap.replicates",
    "bootstrap.alpha",
    "bootstrap.per_x_samples",
    "bootstrap.replicate_epochs",
    "bootstrap.warm_start",
];

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn subset(flat: &FlatConfig, keys: &[&str]) -> FlatConfig {
    let mut out = FlatConfig::new();
    for k in keys {
        if let Some(v) = flat.get(k) {
            out.set(*k, v);
        }
    }
    out
}

fn required<'a>(cfg: &'a FlatConfig, key: &str) -> Result<&'a str> {
    cfg.get(key).ok_or_else(|| anyhow!("missing setting {key}"))
}

fn parsed<T>(cfg: &FlatConfig, key: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    cfg.parsed(key)?.ok_or_else(|| anyhow!("missing setting {key}"))
}

fn master_seed(cfg: &FlatConfig) -> Result<u64> {
    parsed(cfg, "experiment.seed")
}

fn desk(target: TargetId) -> ExperimentConfig {
    ExperimentConfig::profile(Profile::Desk, target)
}

/// Network, diffusion and training settings read through the experiment
/// config so both paths share one parser.
fn model_config(cfg: &FlatConfig) -> Result<ExperimentConfig> {
    let mut e = desk(TargetId::D5I);
    e.apply(&subset(cfg, &keys(&[MODEL_KEYS, BOOTSTRAP_KEYS])))?;
    e.train.validate()?;
    Ok(e)
}

fn model_flags(m: &ModelFlags) -> FlatConfig {
    let mut f = FlatConfig::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            f.set(k, v);
        }
    };
    put("train.epochs", m.epochs.map(|v| v.to_string()));
    put("train.lr", m.lr.map(|v| v.to_string()));
    put("train.batch_size", m.batch_size.map(|v| v.to_string()));
    put("train.mode", m.mode.clone());
    put("net.hidden", m.hidden.clone());
    put("diffusion.T", m.truncation.map(|v| v.to_string()));
    put("diffusion.K", m.steps.map(|v| v.to_string()));
    put("diffusion.grid", m.grid.clone());
    f
}

fn set_opt<T: ToString>(f: &mut FlatConfig, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        f.set(key, v.to_string());
    }
}

fn set_path(f: &mut FlatConfig, key: &str, v: &Option<PathBuf>) {
    if let Some(p) = v {
        f.set(key, p.display().to_string());
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok(BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_dataset(path: &str) -> Result<RegressionDataset> {
    let f = fs::File::open(path).with_context(|| format!("opening {path}"))?;
    Ok(RegressionDataset::read_csv(BufReader::new(f))?)
}

fn read_points(path: &str) -> Result<(usize, Vec<f64>)> {
    let f = fs::File::open(path).with_context(|| format!("opening {path}"))?;
    Ok(read_covariates_csv(BufReader::new(f))?)
}

fn target_for(cfg: &FlatConfig, key: &str, seeds: &mut StageSeeds) -> Result<SyntheticTarget> {
    let id: TargetId = parsed(cfg, key)?;
    let param_seed = derive_seed(master_seed(cfg)?, "target-params", 0);
    seeds.push(("target-params".into(), param_seed));
    Ok(SyntheticTarget::new(id, param_seed))
}

fn target_summary(target: &SyntheticTarget, s: &mut FlatConfig) {
    s.set("target.id", target.id());
    if let Some((w, b)) = target.linear_coefficients() {
        s.set("target.weights", join_list(w));
        s.set("target.bias", b);
    }
}

impl Run for GenerateArgs {
    fn known_keys(&self) -> Vec<&'static str> {
        vec!["experiment.seed", "generate.target", "generate.n"]
    }

    fn defaults(&self, _explicit: &FlatConfig) -> Result<FlatConfig> {
        FlatConfig::parse("experiment.seed = 0\ngenerate.target = d5-i\ngenerate.n = 1000\n").map_err(Into::into)
    }

    fn flags(&self) -> FlatConfig {
        let mut f = FlatConfig::new();
        set_opt(&mut f, "generate.target", &self.target);
        set_opt(&mut f, "generate.n", &self.n);
        f
    }

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()> {
        let target = target_for(cfg, "generate.target", seeds)?;
        let n: usize = parsed(cfg, "generate.n")?;
        let data_seed = derive_seed(master_seed(cfg)?, "data", 0);
        seeds.push(("data".into(), data_seed));
        let data = diffboot_core::generate_dataset(&target, n, data_seed)?;
        data.write_csv(create(out, "data.csv")?)?;
        let mut s = FlatConfig::new();
        target_summary(&target, &mut s);
        s.set("data.rows", n);
        fs::write(out.join("summary.txt"), s.to_text())?;
        Ok(())
    }
}

impl Run for TrainArgs {
    fn known_keys(&self) -> Vec<&'static str> {
        keys(&[&["experiment.seed", "input.data"], MODEL_KEYS])
    }

    fn defaults(&self, _explicit: &FlatConfig) -> Result<FlatConfig> {
        let mut d = subset(&desk(TargetId::D5I).to_flat(), MODEL_KEYS);
        d.set("experiment.seed", 0);
        Ok(d)
    }

    fn flags(&self) -> FlatConfig {
        let mut f = model_flags(&self.model);
        set_path(&mut f, "input.data", &self.data);
        f
    }

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()> {
        let data = read_dataset(required(cfg, "input.data")?)?;
        let e = model_config(cfg)?;
        let mut train = e.train.clone();
        train.seed = master_seed(cfg)?;
        seeds.push(("train".into(), train.seed));
        seeds.push(("init".into(), derive_seed(train.seed, "init", 0)));
        let schedule = e.schedule()?;
        let outcome = train_score(&data, &train, &schedule, &e.hidden)?;
        let mut meta = subset(cfg, &["diffusion.T", "diffusion.K", "diffusion.grid", "sampler.clip_bound"]);
        meta.set("net.hidden", join_list(&e.hidden));
        let ckpt = Checkpoint {
            score: NetScore::new(outcome.net, outcome.standardization)?,
            meta,
        };
        fs::create_dir_all(out)?;
        checkpoint::save(&out.join("checkpoint.txt"), &ckpt)?;
        let mut w = create(out, "loss.csv")?;
        writeln!(w, "epoch,loss")?;
        for (i, l) in outcome.loss_trace.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_f64(*l))?;
        }
        w.flush()?;
        Ok(())
    }
}

const SAMPLE_SCHEDULE_KEYS: &[&str] = &["diffusion.T", "diffusion.K", "diffusion.grid", "sampler.clip_bound"];

impl Run for SampleArgs {
    fn known_keys(&self) -> Vec<&'static str> {
        keys(&[
            &[
                "experiment.seed",
                "input.checkpoint",
                "input.eval",
                "sample.x",
                "sample.count",
                "sample.oracle_target",
            ],
            SAMPLE_SCHEDULE_KEYS,
        ])
    }

    fn defaults(&self, explicit: &FlatConfig) -> Result<FlatConfig> {
        let mut d = subset(&desk(TargetId::D5I).to_flat(), SAMPLE_SCHEDULE_KEYS);
        d.set("experiment.seed", 0);
        d.set("sample.count", 1000);
        if let Some(path) = explicit.get("input.checkpoint") {
            let ckpt = checkpoint::load(Path::new(path))?;
            d.merge(&subset(&ckpt.meta, SAMPLE_SCHEDULE_KEYS));
        }
        Ok(d)
    }

    fn flags(&self) -> FlatConfig {
        let mut f = FlatConfig::new();
        set_path(&mut f, "input.checkpoint", &self.checkpoint);
        set_path(&mut f, "input.eval", &self.eval);
        set_opt(&mut f, "sample.oracle_target", &self.oracle_target);
        set_opt(&mut f, "sample.x", &self.x);
        set_opt(&mut f, "sample.count", &self.count);
        set_opt(&mut f, "diffusion.K", &self.steps);
        set_opt(&mut f, "diffusion.T", &self.truncation);
        f
    }

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()> {
        let field: Box<dyn ScoreField + Send> = match (cfg.get("input.checkpoint"), cfg.get("sample.oracle_target")) {
            (Some(path), None) => Box::new(checkpoint::load(Path::new(path))?.score),
            (None, Some(_)) => Box::new(AnalyticGaussianScore::for_target(&target_for(
                cfg,
                "sample.oracle_target",
                seeds,
            )?)),
            _ => bail!("give exactly one of input.checkpoint and sample.oracle_target"),
        };
        let (dx, points) = match (cfg.get("sample.x"), cfg.get("input.eval")) {
            (Some(x), None) => {
                let x = parse_f64_list(x)?;
                (x.len(), x)
            }
            (None, Some(path)) => read_points(path)?,
            _ => bail!("give exactly one of sample.x and input.eval"),
        };
        if dx != field.covariate_dim() {
            bail!("covariates have {dx} columns but the model expects {}", field.covariate_dim());
        }
        let e = model_config(&subset(cfg, SAMPLE_SCHEDULE_KEYS))?;
        let schedule = e.schedule()?;
        let count: usize = parsed(cfg, "sample.count")?;
        let seed = derive_seed(master_seed(cfg)?, "sample", 0);
        seeds.push(("sample".into(), seed));
        let blocks = points
            .par_chunks(dx)
            .enumerate()
            .map(|(p, x)| {
                let sc = SamplerConfig {
                    sample_count: count,
                    clip_bound: e.clip_bound,
                    seed: derive_seed(seed, "point", p as u64),
                };
                ei_sample(field.as_ref(), x, &schedule, &sc)
            })
            .collect::<diffboot_core::Result<Vec<_>>>()?;
        let dy = field.response_dim();
        let mut w = create(out, "samples.csv")?;
        let header: Vec<String> = (1..=dy).map(|k| format!("y{k}")).collect();
        writeln!(w, "point,{}", header.join(","))?;
        for (p, block) in blocks.iter().enumerate() {
            for row in block.chunks_exact(dy) {
                let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
                writeln!(w, "{},{}", p + 1, fields.join(","))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Run for BootstrapArgs {
    fn known_keys(&self) -> Vec<&'static str> {
        keys(&[&["experiment.seed", "input.data", "input.eval"], MODEL_KEYS, BOOTSTRAP_KEYS])
    }

    fn defaults(&self, _explicit: &FlatConfig) -> Result<FlatConfig> {
        let mut d = subset(&desk(TargetId::D5I).to_flat(), &keys(&[MODEL_KEYS, BOOTSTRAP_KEYS]));
        d.set("experiment.seed", 0);
        Ok(d)
    }

    fn flags(&self) -> FlatConfig {
        let mut f = model_flags(&self.model);
        set_path(&mut f, "input.data", &self.data);
        set_path(&mut f, "input.eval", &self.eval);
        set_opt(&mut f, "bootstrap.replicates", &self.replicates);
        set_opt(&mut f, "bootstrap.alpha", &self.alpha);
        set_opt(&mut f, "bootstrap.per_x_samples", &self.per_x_samples);
        f
    }

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()> {
        let data = read_dataset(required(cfg, "input.data")?)?;
        let (dx, points) = read_points(required(cfg, "input.eval")?)?;
        if dx != data.covariate_dim() {
            bail!("evaluation points have {dx} columns, the data {}", data.covariate_dim());
        }
        let mut e = model_config(cfg)?;
        e.seed = master_seed(cfg)?;
        let boot = e.bootstrap_config();
        seeds.push(("bootstrap".into(), boot.seed));
        let result = run_bootstrap(&data, &e.train, &boot, &e.schedule()?, &e.hidden, e.clip_bound, &points)?;
        result.write_points_csv(create(out, "points.csv")?, None)?;
        result.write_replicates_csv(create(out, "replicates.csv")?)?;
        let mean_len = result.ci_hi.iter().zip(&result.ci_lo).map(|(h, l)| h - l).sum::<f64>() / result.n_points() as f64;
        let mut s = FlatConfig::new();
        s.set("summary.n_train", data.len());
        s.set("summary.n_points", result.n_points());
        s.set("summary.replicates_completed", result.n_replicates());
        s.set("summary.replicates_failed", result.failures.len());
        s.set("summary.alpha", result.alpha);
        s.set("summary.interval_length", mean_len);
        fs::write(out.join("summary.txt"), s.to_text())?;
        Ok(())
    }
}

fn benchmark_base(explicit: &FlatConfig) -> Result<ExperimentConfig> {
    let profile: Profile = explicit.parsed("benchmark.profile")?.unwrap_or(Profile::Desk);
    let target: TargetId = explicit.parsed("experiment.target")?.unwrap_or(TargetId::D5I);
    Ok(ExperimentConfig::profile(profile, target))
}

impl Run for BenchmarkArgs {
    fn known_keys(&self) -> Vec<&'static str> {
        keys(&[&["benchmark.profile"], EXPERIMENT_KEYS])
    }

    fn defaults(&self, explicit: &FlatConfig) -> Result<FlatConfig> {
        let mut d = benchmark_base(explicit)?.to_flat();
        d.set("benchmark.profile", explicit.get("benchmark.profile").unwrap_or("desk"));
        Ok(d)
    }

    fn flags(&self) -> FlatConfig {
        let mut f = model_flags(&self.model);
        set_opt(&mut f, "benchmark.profile", &self.profile);
        set_opt(&mut f, "experiment.target", &self.target);
        set_opt(&mut f, "bootstrap.replicates", &self.replicates);
        f
    }

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()> {
        let mut flat = cfg.clone();
        flat.remove("benchmark.profile");
        let config = ExperimentConfig::from_flat(benchmark_base(cfg)?, &flat)?;
        seeds.extend(config.stage_seeds().into_iter().map(|(s, v)| (s.to_string(), v)));
        let outcome = run_experiment(&config)?;
        write_artifacts(out, &outcome)?;
        Ok(())
    }
}

const DIAGNOSE_KEYS: &[&str] = &[
    "diagnose.kind",
    "diagnose.probes",
    "diagnose.samples",
    "diagnose.n_grid",
    "diagnose.seeds",
    "diagnose.oracle",
    "experiment.target",
    "experiment.seed",
];

impl Run for DiagnoseArgs {
    fn known_keys(&self) -> Vec<&'static str> {
        keys(&[DIAGNOSE_KEYS, MODEL_KEYS, BOOTSTRAP_KEYS])
    }

    fn defaults(&self, explicit: &FlatConfig) -> Result<FlatConfig> {
        let target: TargetId = explicit.parsed("experiment.target")?.unwrap_or(TargetId::D5I);
        let kind = explicit.get("diagnose.kind").unwrap_or("sampler-oracle");
        let mut d = subset(&desk(target).to_flat(), &keys(&[MODEL_KEYS, BOOTSTRAP_KEYS]));
        d.set("experiment.seed", 0);
        d.set("experiment.target", target);
        d.set("diagnose.kind", kind);
        d.set("diagnose.oracle", false);
        d.set("diagnose.seeds", 5);
        match kind {
            "sampler-oracle" => {
                d.set("diffusion.T", 0.001);
                d.set("diagnose.probes", 5);
                d.set("diagnose.samples", 10_000);
            }
            "convergence" => {
                d.set("diagnose.n_grid", "250,1000,4000");
                d.set("diagnose.probes", 10);
                d.set("diagnose.samples", 1000);
            }
            "coverage" => {
                d.set("diagnose.n_grid", "500,2000");
                d.set("diagnose.probes", 100);
            }
            other => bail!("unknown diagnose.kind {other:?} (expected sampler-oracle, convergence or coverage)"),
        }
        Ok(d)
    }

    fn flags(&self) -> FlatConfig {
        let mut f = model_flags(&self.model);
        set_opt(&mut f, "diagnose.kind", &self.kind);
        set_opt(&mut f, "experiment.target", &self.target);
        set_opt(&mut f, "diagnose.n_grid", &self.n_grid);
        set_opt(&mut f, "diagnose.seeds", &self.seeds);
        if self.oracle {
            f.set("diagnose.oracle", true);
        }
        f
    }

    fn execute(&self, cfg: &FlatConfig, out: &Path, seeds: &mut StageSeeds) -> Result<()> {
        let target = target_for(cfg, "experiment.target", seeds)?;
        let seed = master_seed(cfg)?;
        let e = model_config(cfg)?;
        let schedule = e.schedule()?;
        let mut s = FlatConfig::new();
        target_summary(&target, &mut s);
        match required(cfg, "diagnose.kind")? {
            "sampler-oracle" => {
                let probes: usize = parsed(cfg, "diagnose.probes")?;
                let points = diffboot_core::benchmark::generate_covariates(&target, probes, derive_seed(seed, "probes", 0));
                let report = sampler_oracle_report(
                    &target,
                    &schedule,
                    &points,
                    parsed(cfg, "diagnose.samples")?,
                    derive_seed(seed, "oracle", 0),
                )?;
                report.write_csv(create(out, "sampler_oracle.csv")?)?;
                s.set("summary.max_mean_error", report.max_mean_error());
                s.set("summary.max_variance_error", report.max_variance_error());
                s.set("summary.max_w1", report.max_w1());
            }
            "convergence" => {
                let grid = parse_usize_list(required(cfg, "diagnose.n_grid")?)?;
                let tc = TrendConfig {
                    seeds: parsed(cfg, "diagnose.seeds")?,
                    probe_count: parsed(cfg, "diagnose.probes")?,
                    sample_count: parsed(cfg, "diagnose.samples")?,
                    seed: derive_seed(seed, "convergence", 0),
                };
                let rows = if parse_bool(required(cfg, "diagnose.oracle")?)? {
                    let fitter = OracleFitter {
                        target: target.clone(),
                        schedule,
                    };
                    convergence_trend(&target, &fitter, &grid, &tc)?
                } else {
                    convergence_trend(&target, &e.fitter()?, &grid, &tc)?
                };
                write_convergence_csv(create(out, "convergence.csv")?, &rows)?;
                let medians: Vec<f64> = rows.iter().map(|r| r.median_w1).collect();
                s.set("summary.median_w1", join_list(&medians));
                s.set("summary.strictly_decreasing", medians.windows(2).all(|w| w[1] < w[0]));
            }
            "coverage" => {
                let grid = parse_usize_list(required(cfg, "diagnose.n_grid")?)?;
                let tc = TrendConfig {
                    seeds: parsed(cfg, "diagnose.seeds")?,
                    probe_count: parsed(cfg, "diagnose.probes")?,
                    sample_count: 0,
                    seed: derive_seed(seed, "coverage", 0),
                };
                let boot = e.bootstrap_config();
                let rows = if parse_bool(required(cfg, "diagnose.oracle")?)? {
                    let fitter = OracleFitter {
                        target: target.clone(),
                        schedule,
                    };
                    coverage_trend(&target, &fitter, &grid, &boot, &tc)?
                } else {
                    coverage_trend(&target, &e.fitter()?, &grid, &boot, &tc)?
                };
                write_coverage_csv(create(out, "coverage.csv")?, &rows)?;
                let gaps: Vec<f64> = rows.iter().map(|r| r.abs_gap).collect();
                s.set("summary.abs_gap", join_list(&gaps));
                s.set("summary.weakly_decreasing", gaps.windows(2).all(|w| w[1] <= w[0]));
            }
            other => bail!("unknown diagnose.kind {other:?}"),
        }
        fs::write(out.join("summary.txt"), s.to_text())?;
        Ok(())
    }
}
