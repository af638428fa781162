//! Acceptance gate: one PASS/FAIL line per criterion, written straight to
//! stderr so it survives output capture.
//!
//! Criteria 5 to 7 fit real networks and take tens of minutes on one core.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use diffboot_core::benchmark::{
    generate_covariates, run_experiment, ExperimentConfig, Profile, SyntheticTarget, TargetId,
};
use diffboot_core::bootstrap::{confidence_interval, empirical_cdf, quantile};
use diffboot_core::diagnostics::{convergence_trend, coverage_trend, sampler_oracle_report, TrendConfig};
use diffboot_core::diffusion::{build_schedule, dsm_loss_and_grad, dsm_loss_strict, DsmScratch, GridKind};
use diffboot_core::mlp::Gradients;
use diffboot_core::rng;
use diffboot_core::{MlpScoreNet, RegressionDataset};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion} [{verdict}] {title}: {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------- 1

/// Floor on the denominator so parameters with vanishing gradient are
/// compared absolutely.
const GRAD_FLOOR: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-5;

fn random_net(r: &mut impl Rng, seed: u64) -> MlpScoreNet {
    loop {
        let dy = r.random_range(1..=2);
        let dx = r.random_range(1..=5);
        let mut sizes = vec![1 + dy + dx];
        for _ in 0..r.random_range(1..=3) {
            sizes.push(r.random_range(2..=16));
        }
        sizes.push(dy);
        let net = MlpScoreNet::init(&sizes, seed).unwrap();
        if net.param_count() <= 1000 {
            let mut net = net;
            // nonzero biases so every layer's bias gradient is exercised
            let params: Vec<f64> = net.parameters().iter().map(|p| p + 0.1 * r.random::<f64>()).collect();
            net.set_parameters(&params).unwrap();
            return net;
        }
    }
}

fn flat(g: &Gradients) -> Vec<f64> {
    g.iter().copied().collect()
}

fn max_rel_error(analytic: &[f64], net: &MlpScoreNet, f: impl Fn(&MlpScoreNet) -> f64) -> f64 {
    let h = 1e-5;
    let base = net.parameters();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_parameters(&p).unwrap();
        let up = f(&probe);
        p[i] = base[i] - h;
        probe.set_parameters(&p).unwrap();
        let down = f(&probe);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(GRAD_FLOOR));
    }
    worst
}

#[test]
fn criterion_1_gradient_check() {
    let mut r = rng::stream(101);
    let mut worst = 0.0f64;
    let nets = 24;
    for k in 0..nets {
        let net = random_net(&mut r, 1000 + k);
        let (din, dout) = (net.input_dim(), net.output_dim());

        let input: Vec<f64> = (0..din).map(|_| r.sample(StandardNormal)).collect();
        let weight: Vec<f64> = (0..dout).map(|_| r.sample(StandardNormal)).collect();
        let g = net.backward(&input, &weight).unwrap();
        worst = worst.max(max_rel_error(&flat(&g), &net, |n| {
            n.forward(&input).unwrap().iter().zip(&weight).map(|(o, w)| o * w).sum()
        }));

        let rows = 6;
        let dx = din - 1 - dout;
        let x: Vec<f64> = (0..rows * dx).map(|_| r.sample(StandardNormal)).collect();
        let y0: Vec<f64> = (0..rows * dout).map(|_| r.sample(StandardNormal)).collect();
        let t: Vec<f64> = (0..rows).map(|_| r.random_range(0.01..0.99)).collect();
        let z: Vec<f64> = (0..rows * dout).map(|_| r.sample(StandardNormal)).collect();
        let mut scratch = DsmScratch::default();
        let mut grads = Gradients::zeros_like(&net);
        dsm_loss_and_grad(&net, &x, &y0, &t, &z, &mut scratch, Some(&mut grads));
        worst = worst.max(max_rel_error(&flat(&grads), &net, |n| {
            dsm_loss_and_grad(n, &x, &y0, &t, &z, &mut DsmScratch::default(), None)
        }));
    }
    report(
        1,
        "backprop vs central differences",
        worst < GRAD_TOL,
        &format!("{nets} nets, output and loss gradients, max relative error {worst:.2e} (tol {GRAD_TOL:.0e})"),
    );
}

// ---------------------------------------------------------------- 2

/// Plain-loop forward pass read off the stored weights.
fn reference_forward(net: &MlpScoreNet, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.outputs());
        for o in 0..layer.outputs() {
            let row = &layer.weights()[o * layer.inputs()..(o + 1) * layer.inputs()];
            let s = layer.biases()[o] + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
            next.push(if l < last { s.max(0.0) } else { s });
        }
        a = next;
    }
    a
}

#[test]
fn criterion_2_strict_loss_matches_double_sum() {
    let truncation = 1e-3;
    let mut r = rng::stream(202);
    let mut worst = 0.0f64;
    let instances = 50;
    for k in 0..instances {
        let dx = r.random_range(1..=4);
        let dy = r.random_range(1..=2);
        let n = r.random_range(1..=12);
        let m = r.random_range(1..=8);
        let net = MlpScoreNet::init(&[1 + dy + dx, r.random_range(2..=10), dy], 2000 + k).unwrap();
        let x: Vec<f64> = (0..n * dx).map(|_| r.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n * dy).map(|_| r.sample(StandardNormal)).collect();
        let data = RegressionDataset::new(dx, dy, x.clone(), y.clone()).unwrap();
        let times: Vec<f64> = (0..m).map(|_| r.random_range(truncation..=1.0 - truncation)).collect();
        let noises: Vec<f64> = (0..m * dy).map(|_| r.sample(StandardNormal)).collect();

        let got = dsm_loss_strict(&net, &data, &times, &noises, truncation).unwrap();
        let mut sum = 0.0;
        for (j, &t) in times.iter().enumerate() {
            let mean = 1.0 - t;
            let sd = (1.0 - (1.0 - t) * (1.0 - t)).sqrt();
            for i in 0..n {
                let z = &noises[j * dy..(j + 1) * dy];
                let mut input = vec![t];
                input.extend((0..dy).map(|c| mean * y[i * dy + c] + sd * z[c]));
                input.extend_from_slice(&x[i * dx..(i + 1) * dx]);
                let out = reference_forward(&net, &input);
                let sq: f64 = out.iter().zip(z).map(|(o, zc)| (o + zc / sd).powi(2)).sum();
                sum += sq / (1.0 - t);
            }
        }
        let expected = sum / (n * m) as f64;
        worst = worst.max((got - expected).abs() / expected.abs().max(1.0));
    }
    report(
        2,
        "strict DSM risk vs brute-force double sum",
        worst <= 1e-12,
        &format!("{instances} instances, max relative deviation {worst:.2e} (tol 1e-12)"),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_sampler_recovers_truth_under_exact_score() {
    let schedule = build_schedule(1e-3, 200, GridKind::Uniform).unwrap();
    let (mut mean_err, mut var_err, mut w1) = (0.0f64, 0.0f64, 0.0f64);
    for (k, id) in TargetId::ALL.into_iter().enumerate() {
        let target = SyntheticTarget::new(id, 303 + k as u64);
        let probes = generate_covariates(&target, 5, 310 + k as u64);
        let rep = sampler_oracle_report(&target, &schedule, &probes, 10_000, 320 + k as u64).unwrap();
        mean_err = mean_err.max(rep.max_mean_error());
        var_err = var_err.max(rep.max_variance_error());
        w1 = w1.max(rep.max_w1());
    }
    report(
        3,
        "EI sampler with the exact score (K=200, T=1e-3, 10^4 draws, 5 probes x 5 targets)",
        mean_err < 0.05 && var_err < 0.1 && w1 < 0.05,
        &format!("max |mean-f0| {mean_err:.4} (<0.05), max |var-1| {var_err:.4} (<0.1), max W1 {w1:.4} (<0.05)"),
    );
}

// ---------------------------------------------------------------- 4

fn count_le(values: &[f64], r: f64) -> usize {
    values.iter().filter(|&&v| v <= r).count()
}

/// Smallest sample value whose empirical CDF reaches `k / B`.
fn reference_quantile(values: &[f64], k: usize) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    *s.iter().find(|&&v| count_le(values, v) >= k).unwrap()
}

fn check_examples() -> Vec<String> {
    let mut bad = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_string());
        }
    };
    let v = [1.0, 2.0, 3.0, 4.0];
    expect("cdf mid", empirical_cdf(&v, 2.5).unwrap() == 0.5);
    expect("cdf below", empirical_cdf(&v, 0.0).unwrap() == 0.0);
    expect("cdf at max", empirical_cdf(&v, 4.0).unwrap() == 1.0);
    expect("cdf empty", empirical_cdf(&[], 0.0).is_err());
    let mut r = rng::stream(404);
    let u: Vec<f64> = (0..100).map(|_| r.random::<f64>()).collect();
    let mut s = u.clone();
    s.sort_by(f64::total_cmp);
    expect("cdf at median draw", empirical_cdf(&u, s[49]).unwrap() == 0.5);
    let w = [-2.0, -1.0, 1.0, 2.0];
    expect("quantile 0.75", quantile(&w, 0.75).unwrap() == 1.0);
    expect("quantile 0.25", quantile(&w, 0.25).unwrap() == -2.0);
    expect("quantile constant", quantile(&[3.5; 7], 0.4).unwrap() == 3.5);
    expect("quantile q=0", quantile(&w, 0.0).is_err());
    expect("quantile q=1", quantile(&w, 1.0).is_err());
    expect("interval degenerate", confidence_interval(1.5, &[0.0; 9], 0.05).unwrap() == (1.5, 1.5));
    expect("interval example", confidence_interval(0.0, &w, 0.5).unwrap() == (-1.0, 2.0));
    bad
}

fn check_properties(r: &mut impl Rng) -> Vec<String> {
    let mut bad = Vec::new();
    let b = r.random_range(2..=120);
    // integer-valued draws half the time so ties are common
    let ties = r.random::<bool>();
    let values: Vec<f64> = (0..b)
        .map(|_| {
            let v: f64 = r.sample(StandardNormal);
            if ties {
                (3.0 * v).round()
            } else {
                v
            }
        })
        .collect();

    for k in 1..b {
        let q = k as f64 / b as f64;
        let qv = quantile(&values, q).unwrap();
        if qv != reference_quantile(&values, k) {
            bad.push(format!("quantile B={b} k={k}"));
        }
        if empirical_cdf(&values, qv).unwrap() < q {
            bad.push(format!("duality B={b} k={k}"));
        }
        if let Some(below) = values.iter().filter(|&&v| v < qv).copied().reduce(f64::max) {
            if empirical_cdf(&values, below).unwrap() >= q {
                bad.push(format!("minimality B={b} k={k}"));
            }
        }
    }

    let f_hat: f64 = r.sample(StandardNormal);
    let replicates: Vec<f64> = values.iter().map(|v| f_hat + v).collect();
    let centered: Vec<f64> = replicates.iter().map(|v| v - f_hat).collect();
    let alpha = r.random_range(0.01..0.99);
    let (lo, hi) = confidence_interval(f_hat, &centered, alpha).unwrap();
    if lo > hi {
        bad.push(format!("ordering B={b} alpha={alpha}"));
    }
    // the basic interval written through raw replicate quantiles
    let lo_raw = 2.0 * f_hat - quantile(&replicates, 1.0 - alpha / 2.0).unwrap();
    let hi_raw = 2.0 * f_hat - quantile(&replicates, alpha / 2.0).unwrap();
    if (lo - lo_raw).abs() > 1e-12 * (1.0 + lo.abs()) || (hi - hi_raw).abs() > 1e-12 * (1.0 + hi.abs()) {
        bad.push(format!("centering B={b}"));
    }

    let mut shuffled = centered.clone();
    shuffled.shuffle(r);
    if confidence_interval(f_hat, &shuffled, alpha).unwrap() != (lo, hi) {
        bad.push(format!("permutation B={b}"));
    }

    let wider = r.random_range(0.001..alpha);
    let (wlo, whi) = confidence_interval(f_hat, &centered, wider).unwrap();
    if wlo > lo || whi < hi {
        bad.push(format!("nesting B={b} alpha={alpha} vs {wider}"));
    }

    // symmetric sample: both tails use mirrored order statistics, so the
    // endpoints' ranks in the sorted sample sum to B+1 up to one position
    let half: Vec<f64> = (0..b).map(|i| 0.5 + i as f64 + r.random::<f64>() * 0.5).collect();
    let sym: Vec<f64> = half.iter().flat_map(|&v| [v, -v]).collect();
    let (slo, shi) = confidence_interval(0.0, &sym, alpha).unwrap();
    let mut sorted = sym.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = |v: f64| sorted.iter().position(|&s| s == v).unwrap() + 1;
    let (upper_rank, lower_rank) = (rank(-slo), rank(-shi));
    if (upper_rank + lower_rank).abs_diff(sym.len() + 1) > 1 {
        bad.push(format!("symmetry B={} alpha={alpha}", sym.len()));
    }
    bad
}

#[test]
fn criterion_4_quantile_cdf_interval_suite() {
    let mut bad = check_examples();
    let mut r = rng::stream(405);
    let cases = 1000;
    for _ in 0..cases {
        bad.extend(check_properties(&mut r));
    }
    report(
        4,
        "quantile / CDF / interval examples and properties",
        bad.is_empty(),
        &format!("12 examples + {cases} random cases, {} violations {:?}", bad.len(), &bad[..bad.len().min(5)]),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_desk_coverage_d5_i() {
    let cfg = ExperimentConfig::profile(Profile::Desk, TargetId::D5I);
    let out = run_experiment(&cfg).unwrap();
    let mut lengths: Vec<f64> = out.result.ci_hi.iter().zip(&out.result.ci_lo).map(|(h, l)| h - l).collect();
    lengths.sort_by(f64::total_cmp);
    let median_len = diffboot_core::diagnostics::median(&lengths);
    let cp = out.metrics.cp;
    report(
        5,
        "desk coverage on D5-I (n=2000, 200 test points, B=50, alpha=0.05)",
        (0.87..=1.0).contains(&cp) && median_len < 1.0,
        &format!(
            "CP {cp:.3} (in [0.87, 1]), median length {median_len:.3} (<1), mse_org {:.4}, mse_b {:.4}",
            out.metrics.mse_org, out.metrics.mse_b
        ),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_w1_decreases_with_n_on_d5_ii() {
    let base = ExperimentConfig::profile(Profile::Desk, TargetId::D5II);
    let target = SyntheticTarget::new(TargetId::D5II, base.stage_seed("target-params"));
    let tc = TrendConfig {
        seeds: 5,
        probe_count: 10,
        sample_count: 2000,
        seed: 606,
    };
    let rows = convergence_trend(&target, &base.fitter().unwrap(), &[250, 1000, 4000], &tc).unwrap();
    let medians: Vec<f64> = rows.iter().map(|r| r.median_w1).collect();
    let iqrs: Vec<f64> = rows.iter().map(|r| r.iqr_w1).collect();
    report(
        6,
        "median W1 to the truth strictly decreasing in n (D5-II, n=250/1000/4000, 5 seeds)",
        medians.windows(2).all(|w| w[1] < w[0]),
        &format!("median W1 {medians:.4?}, IQR {iqrs:.4?}"),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_coverage_gap_shrinks_with_n() {
    let base = ExperimentConfig::profile(Profile::Desk, TargetId::D5I);
    let target = SyntheticTarget::new(TargetId::D5I, base.stage_seed("target-params"));
    let boot = base.bootstrap_config();
    let tc = TrendConfig {
        seeds: 5,
        probe_count: 100,
        sample_count: 0,
        seed: 707,
    };
    let rows = coverage_trend(&target, &base.fitter().unwrap(), &[500, 2000], &boot, &tc).unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.abs_gap).collect();
    let cps: Vec<&Vec<f64>> = rows.iter().map(|r| &r.per_seed_cp).collect();
    report(
        7,
        "median |CP-0.95| weakly decreasing in n (D5-I, n=500/2000, B=50, J=500, 5 seeds, 100 test points)",
        gaps[1] <= gaps[0],
        &format!("median gap {gaps:.3?}, per-seed CP {cps:.2?}"),
    );
}

// ---------------------------------------------------------------- 8

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_diffboot")
}

fn run(args: &[&str]) {
    let out = Command::new(bin()).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every file under `dir` keyed by relative path; manifest wall-clock lines
/// dropped.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = fs::read(&path).unwrap();
            if path.file_name().is_some_and(|n| n == "manifest.txt") {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("# started_unix") && !l.starts_with("# finished_unix"))
                    .flat_map(|l| format!("{l}\n").into_bytes())
                    .collect();
            }
            files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    files
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn criterion_8_replay_and_thread_count_reproducibility() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let data = a.join("generate").join("data.csv");
    let eval = root.path().join("eval.csv");
    fs::write(&eval, "x1,x2,x3,x4,x5\n0.1,0.2,0.3,0.4,0.5\n0.9,0.8,0.7,0.6,0.5\n").unwrap();

    let small = ["--epochs", "3", "--batch-size", "64", "--steps", "20"];
    let mut runs: Vec<(String, Vec<String>)> = Vec::new();
    let mut add = |name: &str, args: &[&str]| {
        runs.push((name.to_string(), args.iter().map(|a| a.to_string()).collect()));
    };
    add("generate", &["generate", "--seed", "8", "--target", "d5-ii", "--n", "300"]);
    add("train", &[&["train", "--seed", "8", "--data", s(&data)][..], &small].concat());
    let ckpt = a.join("train").join("checkpoint.txt");
    add(
        "sample",
        &["sample", "--seed", "8", "--checkpoint", s(&ckpt), "--eval", s(&eval), "--count", "200"],
    );
    add(
        "bootstrap",
        &[
            &["bootstrap", "--seed", "8", "--data", s(&data), "--eval", s(&eval)][..],
            &["--replicates", "4", "--per-x-samples", "50"],
            &small,
        ]
        .concat(),
    );
    add("benchmark", &["benchmark", "--seed", "8", "--profile", "dry-run", "--target", "d10-i"]);
    add(
        "diagnose",
        &[
            &["diagnose", "--seed", "8", "--kind", "convergence", "--target", "d5-ii"][..],
            &["--n-grid", "100,200", "--seeds", "2"],
            &small,
        ]
        .concat(),
    );

    let mut mismatches = Vec::new();
    let mut files = 0;
    for (name, args) in &runs {
        let first = a.join(name);
        let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
        argv.extend(["--threads", "1", "--out", s(&first)]);
        run(&argv);

        // fresh run on 8 threads with the same flags
        let threaded = root.path().join("threads8").join(name);
        let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
        argv.extend(["--threads", "8", "--out", s(&threaded)]);
        run(&argv);

        // replay from the manifest alone
        let replay = root.path().join("replay").join(name);
        let manifest = first.join("manifest.txt");
        run(&[args[0].as_str(), "--config", s(&manifest), "--threads", "8", "--out", s(&replay)]);

        let reference = snapshot(&first);
        files += reference.len();
        for (label, other) in [("threads 8", snapshot(&threaded)), ("replay", snapshot(&replay))] {
            if other != reference {
                let differing: Vec<_> = reference
                    .keys()
                    .chain(other.keys())
                    .filter(|k| reference.get(*k) != other.get(*k))
                    .map(|k| k.display().to_string())
                    .collect();
                mismatches.push(format!("{name} ({label}): {differing:?}"));
            }
        }
    }
    report(
        8,
        "manifest replay and --threads 1 vs 8 are byte-identical",
        mismatches.is_empty(),
        &format!("{} commands, {files} files compared, mismatches {mismatches:?}", runs.len()),
    );
}
