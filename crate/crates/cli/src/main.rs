//! `diffboot`: train conditional diffusion models, draw from them and run
//! bootstrap coverage experiments.
//!
//! Every subcommand resolves its settings from built-in defaults, then the
//! `--config` file, then command-line flags, and writes the resolved set to
//! `<out>/manifest.txt` so the run can be replayed with `--config`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

use commands::Run;
use manifest::{unix_now, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "diffboot", version, about = "Deep bootstrap for nonparametric regression")]
struct Cli {
    /// Flat `section.key = value` file; a previous run's manifest works too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (`experiment.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Results directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,

    /// Worker threads; changes wall time only.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset CSV.
    Generate(GenerateArgs),
    /// Fit a score network to a dataset and save a checkpoint.
    Train(TrainArgs),
    /// Draw responses from a checkpoint or from the analytic oracle.
    Sample(SampleArgs),
    /// Bootstrap confidence intervals at given covariates.
    Bootstrap(BootstrapArgs),
    /// Synthetic benchmark with coverage metrics.
    Benchmark(BenchmarkArgs),
    /// Sampler oracle report and convergence/coverage trends.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `stochastic` or `strict-erm`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Hidden widths, e.g. `48,48`.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Truncation `T`.
    #[arg(long)]
    pub truncation: Option<f64>,
    /// Sampler steps `K`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// `uniform` or `geometric`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sample with the exact score of this target instead of a checkpoint.
    #[arg(long)]
    pub oracle_target: Option<String>,
    /// One covariate vector, comma separated.
    #[arg(long)]
    pub x: Option<String>,
    /// Covariate CSV (`x1..xd` header); one block of samples per row.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub truncation: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Covariate CSV of evaluation points.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Draws per evaluation point for the conditional mean.
    #[arg(long)]
    pub per_x_samples: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// `table2`, `desk` or `dry-run`.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// `sampler-oracle`, `convergence` or `coverage`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Training sizes, e.g. `250,1000,4000`.
    #[arg(long)]
    pub n_grid: Option<String>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Use the exact score instead of training.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub model: ModelFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let (name, run): (&str, Box<dyn Run>) = match cli.command {
        Command::Generate(a) => ("generate", Box::new(a)),
        Command::Train(a) => ("train", Box::new(a)),
        Command::Sample(a) => ("sample", Box::new(a)),
        Command::Bootstrap(a) => ("bootstrap", Box::new(a)),
        Command::Benchmark(a) => ("benchmark", Box::new(a)),
        Command::Diagnose(a) => ("diagnose", Box::new(a)),
    };
    let resolved = match commands::resolve(run.as_ref(), cli.config.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(e) => {
            if fs::create_dir_all(&cli.out).is_ok() {
                let _ = fs::write(cli.out.join("FAILED"), format!("{e:#}\n"));
            }
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let mut manifest = RunManifest::new(name, resolved);
    let outcome = run.execute(&manifest.config, &cli.out, &mut manifest.stage_seeds);
    manifest.finished = Some(unix_now());
    manifest.status = if outcome.is_ok() { "ok".into() } else { "failed".into() };
    if let Err(e) = manifest.write(&cli.out) {
        eprintln!("error: cannot write manifest: {e:#}");
    }
    match outcome {
        Ok(()) => {
            let _ = fs::remove_file(cli.out.join("FAILED"));
            eprintln!("{name}: results in {}", cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = fs::write(cli.out.join("FAILED"), format!("{e:#}\n"));
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
