//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use common::*;
use lpv_subnet::benchmark::{
    builtin_pendulum, split_dataset, DataSet, ExcitationConfig, LtiSystem, NoiseConfig, SplitSizes, Splits,
};
use lpv_subnet::loss::{batch_loss, batch_loss_and_grad, full_prediction_loss, sample_batch, truncated_loss, BatchSpec};
use lpv_subnet::lpv::{LpvSubnet, ModelConfig, NoiseStructure, SchedulingMode};
use lpv_subnet::metrics::noise_ceiling_bfr;
use lpv_subnet::rng::{seeded, uniform};
use lpv_subnet::trainer::{train, TrainOptions, TrainingConfig, ValidationRecord};

fn report(id: &str, pass: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_1_noise_ceiling() {
    let c = noise_ceiling_bfr(35.0);
    let rounded = (c * 100.0).round() / 100.0;
    report("1", rounded == 98.22, format!("ceiling(35 dB) = {c:.4}%"));
}

#[test]
fn criterion_2_truncated_recovers_full_loss() {
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let mut rng = seeded(i);
        let len = uniform(&mut rng, 20.0, 60.0) as usize;
        let n_p = (i % 3) as usize;
        let noise = if i % 2 == 0 { NoiseStructure::Innovation } else { NoiseStructure::OutputError };
        let mode = [SchedulingMode::SelfScheduled, SchedulingMode::External, SchedulingMode::Oracle][(i % 3) as usize];
        let ds = random_data(len, 1, 1, n_p, 40 + i);
        let net = random_net(&small_config(1 + (i % 3) as usize, n_p, 2 + (i % 4) as usize, 6, noise, mode), &ds, i);
        let span = len - net.lag();
        let full = full_prediction_loss(&net, &ds).unwrap();
        let trunc = truncated_loss(&net, &ds, span).unwrap();
        worst = worst.max((full - trunc).abs() / full.abs().max(1e-300));
    }
    report("2", worst < 1e-12, format!("max relative difference {worst:e} over 10 instances"));
}

#[test]
fn criterion_3_gradient_oracle() {
    let cases = [
        (NoiseStructure::OutputError, SchedulingMode::SelfScheduled, 3, 2, 8),
        (NoiseStructure::Innovation, SchedulingMode::SelfScheduled, 2, 3, 6),
        (NoiseStructure::Innovation, SchedulingMode::External, 3, 1, 8),
        (NoiseStructure::Innovation, SchedulingMode::Oracle, 1, 2, 5),
        (NoiseStructure::OutputError, SchedulingMode::SelfScheduled, 2, 0, 7),
        (NoiseStructure::Innovation, SchedulingMode::SelfScheduled, 3, 4, 8),
    ];
    let mut worst = 0.0f64;
    for (i, (noise, mode, n_x, n_p, horizon)) in cases.into_iter().enumerate() {
        let seed = 700 + i as u64;
        let ds = random_data(32, 1, 1, n_p, seed);
        let net = random_net(&small_config(n_x, n_p, 3, 8, noise, mode), &ds, seed);
        let mut rng = seeded(seed);
        let batch = sample_batch(&mut rng, ds.len(), horizon, net.lag(), 6).unwrap();
        let (_, grads) = batch_loss_and_grad(&net, &ds, &batch, 1).unwrap();
        let fd = fd_gradient(&net, &ds, batch.starts(), horizon, 1e-6);
        worst = worst.max(max_relative_error(&grads, &fd));
    }
    report("3", worst < 1e-4, format!("max relative error {worst:e} over {} instances", cases.len()));
}

#[test]
fn criterion_4_affinity_and_partition() {
    // convex combination identity
    let ds = random_data(40, 1, 1, 0, 1);
    let net = random_net(&small_config(3, 4, 3, 6, NoiseStructure::Innovation, SchedulingMode::SelfScheduled), &ds, 1);
    let mut rng = seeded(2);
    let mut affine_err = 0.0f64;
    for f in [&net.model.a, &net.model.b, &net.model.k, &net.model.c, &net.model.d] {
        for _ in 0..20 {
            let n = f.n_p();
            let p1: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
            let p2: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
            let l = uniform(&mut rng, 0.0, 1.0);
            let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| l * a + (1.0 - l) * b).collect();
            let lhs = f.eval(&mix).unwrap();
            let mut rhs = f.eval(&p1).unwrap().scaled(l);
            rhs.add_scaled(&f.eval(&p2).unwrap(), 1.0 - l);
            for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                affine_err = affine_err.max((a - b).abs());
            }
        }
    }
    // perturbing y_k leaves y_hat_k and p^y_k unchanged
    let n_px = net.model.n_px;
    let mut firewall = true;
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let u = [uniform(&mut rng, -1.0, 1.0)];
        let a = net.predictor_step(&x, &u, &[uniform(&mut rng, -3.0, 3.0)]).unwrap();
        let b = net.predictor_step(&x, &u, &[uniform(&mut rng, -3.0, 3.0)]).unwrap();
        firewall &= a.y_hat == b.y_hat && a.p_hat[n_px..] == b.p_hat[n_px..];
        firewall &= a.x_next != b.x_next;
    }
    // output-error rollouts ignore outputs after the encoder window
    let oe = random_net(&small_config(2, 2, 3, 6, NoiseStructure::OutputError, SchedulingMode::SelfScheduled), &ds, 3);
    let base = oe.rollout(&ds, SchedulingMode::SelfScheduled, 5, 30).unwrap();
    let mut independent = true;
    for k in 6..35 {
        let mut y = ds.y().to_vec();
        y[k] += 10.0;
        let mut other = DataSet::new(1, ds.u().to_vec(), 1, y).unwrap();
        other.meta = ds.meta.clone();
        independent &= oe.rollout(&other, SchedulingMode::SelfScheduled, 5, 30).unwrap().y_hat == base.y_hat;
    }
    let pass = affine_err < 1e-12 && firewall && independent;
    report(
        "4",
        pass,
        format!("affine error {affine_err:e}, output firewall {firewall}, OE independence {independent}"),
    );
}

/// Training budget for the benchmark experiments.
fn budget(max_updates: usize) -> TrainingConfig {
    TrainingConfig {
        max_updates,
        val_period: 250,
        seed: 5,
        ..TrainingConfig::default()
    }
}

fn fit(cfg: &ModelConfig, splits: &Splits, tc: &TrainingConfig) -> ValidationRecord {
    let net = LpvSubnet::init(cfg, splits.est.compute_stats(), 11).unwrap();
    let out = train(net, &splits.est, &splits.val, tc, TrainOptions::default(), None).unwrap();
    out.history.best_validation().unwrap().clone()
}

fn bench_config(n_p: usize, width: usize, mode: SchedulingMode) -> ModelConfig {
    let mut cfg = ModelConfig::new(2, n_p);
    cfg.lag = Some(5);
    cfg.encoder_hidden = vec![width, width];
    cfg.pnet_hidden = vec![width, width];
    cfg.mode = mode;
    cfg
}

#[test]
fn criterion_5_lti_recovery() {
    let sys = LtiSystem::random_stable(2, 1, 1, 0.9, 3).unwrap();
    let sizes = SplitSizes {
        est: 10_000,
        val: 10_000,
        test: 100,
    };
    let splits = split_dataset(&sys, &ExcitationConfig::at_system_rate(), &NoiseConfig::noiseless(), sizes, 1).unwrap();
    let best = fit(&bench_config(0, 16, SchedulingMode::SelfScheduled), &splits, &budget(10_000));
    report(
        "5",
        best.bfr >= 99.0,
        format!("validation BFR {:.3}% at update {}", best.bfr, best.update),
    );
}

const PENDULUM_UPDATES: usize = 10_000;
const PENDULUM_WIDTH: usize = 16;

fn pendulum() -> &'static Splits {
    static DATA: OnceLock<Splits> = OnceLock::new();
    DATA.get_or_init(|| {
        let sizes = SplitSizes {
            est: 10_000,
            val: 10_000,
            test: 1_000,
        };
        split_dataset(
            &builtin_pendulum(),
            &ExcitationConfig::at_system_rate(),
            &NoiseConfig::output_error_snr(35.0),
            sizes,
            1,
        )
        .unwrap()
    })
}

#[test]
fn criterion_6_nonlinear_benchmark_gap() {
    let splits = pendulum();
    let tc = budget(PENDULUM_UPDATES);
    let lpv = fit(&bench_config(1, PENDULUM_WIDTH, SchedulingMode::SelfScheduled), splits, &tc);
    let lti = fit(&bench_config(0, PENDULUM_WIDTH, SchedulingMode::SelfScheduled), splits, &tc);
    let oracle = fit(&bench_config(1, PENDULUM_WIDTH, SchedulingMode::Oracle), splits, &tc);
    let a = lpv.bfr >= 90.0;
    let b = lpv.bfr - lti.bfr >= 3.0;
    let c = (oracle.bfr - lpv.bfr).abs() <= 3.0;
    report(
        "6",
        a && b && c,
        format!(
            "self {:.2}% (a {a}), LTI {:.2}% (b {b}), oracle {:.2}% (c {c})",
            lpv.bfr, lti.bfr, oracle.bfr
        ),
    );
}

#[test]
fn criterion_7_external_scheduling() {
    let splits = pendulum();
    let cfg = bench_config(1, PENDULUM_WIDTH, SchedulingMode::External);
    let net = LpvSubnet::init(&cfg, splits.est.compute_stats(), 11).unwrap();
    let out = train(net, &splits.est, &splits.val, &budget(PENDULUM_UPDATES), TrainOptions::default(), None).unwrap();
    let best = out.history.best_validation().unwrap().clone();
    let bare = splits.test.without_scheduling();
    let traj = out.net.simulate(&bare, SchedulingMode::External, out.net.lag(), None);
    let evaluates = traj.is_ok() && bare.p().is_none();
    report(
        "7",
        best.bfr >= 85.0 && evaluates,
        format!("validation BFR {:.2}%, evaluates on u,y-only data {evaluates}", best.bfr),
    );
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_lpvsubnet");
    let cfg = dir.join("exp.json");
    std::fs::write(
        &cfg,
        r#"{
            "version": 1,
            "seed": 2024,
            "system": {"kind": "pendulum"},
            "noise": {"structure": "output_error", "snr_db": 35},
            "splits": {"est": 600, "val": 400, "test": 300},
            "model": {"n_x": 2, "n_p": 1, "lag": 5, "encoder_hidden": [8, 8], "pnet_hidden": [8, 8]},
            "training": {"max_updates": 60, "batch_size": 64, "t_start": 5, "t_final": 20,
                         "warmup_updates": 30, "val_period": 20},
            "output_dir": "out"
        }"#,
    )
    .unwrap();
    for verb in ["generate", "train", "evaluate"] {
        let status = Command::new(bin)
            .args([verb, "--config", cfg.to_str().unwrap(), "--threads", "1"])
            .env_remove(lpv_subnet::harness::OUTPUT_DIR_ENV)
            .output()
            .unwrap();
        assert!(status.status.success(), "{verb}: {}", String::from_utf8_lossy(&status.stderr));
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "history.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_8_serialization_and_reproducibility() {
    let ds = random_data(80, 1, 1, 2, 9);
    let mut roundtrip = true;
    for (noise, mode) in [
        (NoiseStructure::Innovation, SchedulingMode::SelfScheduled),
        (NoiseStructure::OutputError, SchedulingMode::External),
        (NoiseStructure::Innovation, SchedulingMode::Oracle),
    ] {
        let net = random_net(&small_config(3, 2, 4, 7, noise, mode), &ds, 8);
        let back = LpvSubnet::from_json(&net.to_json().unwrap()).unwrap();
        let a = net.simulate(&ds, mode, 4, None).unwrap();
        let b = back.simulate(&ds, mode, 4, None).unwrap();
        let bits = |t: &lpv_subnet::lpv::Trajectory| {
            t.y_hat.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        roundtrip &= bits(&a) == bits(&b);
    }
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (f1, f2) = (pipeline(d1.path()), pipeline(d2.path()));
    let names: Vec<&str> = f1.iter().map(|(n, _)| n.as_str()).collect();
    let reproducible = f1 == f2 && names.contains(&"model.json") && names.contains(&"predictions.csv");
    report(
        "8",
        roundtrip && reproducible,
        format!("bit-identical reload {roundtrip}, pipeline reproducible {reproducible} ({} files)", f1.len()),
    );
}

#[test]
fn criterion_9_batch_loss_unbiased() {
    let ds = random_data(60, 1, 1, 1, 31);
    let net = random_net(&small_config(2, 1, 3, 6, NoiseStructure::Innovation, SchedulingMode::SelfScheduled), &ds, 31);
    let horizon = 6;
    let target = truncated_loss(&net, &ds, horizon).unwrap();
    let mut rng = seeded(99);
    let draws = 10_000;
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let b: BatchSpec = sample_batch(&mut rng, ds.len(), horizon, net.lag(), 4).unwrap();
            batch_loss(&net, &ds, &b).unwrap()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / draws as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let z = (mean - target) / se;
    report(
        "9",
        z.abs() < 3.0,
        format!("mean {mean:.6} vs truncated {target:.6}, {z:+.2} standard errors"),
    );
}
