//! Acceptance suite: one numbered check per criterion, each reported as a
//! single PASS/FAIL line on stderr. The test fails if any criterion fails.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{grad_suite, metric_oracles, random_model, rf_probe, rng, tiny_config};
use ndarray::Array2;
use sinmotion::applications::{
    build_mask, compose, generate, generate_crowd, generate_long, harmonize, HarmonizationSpec, LowPass, RoiMask,
};
use sinmotion::checkpoint::Checkpoint;
use sinmotion::cli::main_with;
use sinmotion::config::RunConfig;
use sinmotion::denoiser::{receptive_field, Denoiser, DenoiserConfig};
use sinmotion::diffusion::{q_sample, NoiseSchedule, SamplerConfig};
use sinmotion::metrics::{evaluate, inter_diversity, EvalConfig};
use sinmotion::motion::{bundled_walk, write_bvh_file};
use sinmotion::tensor::Tensor;
use sinmotion::trainer::{train, TrainReport};

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

/// Runs one criterion; a panic or an `Err` detail counts as a failure.
fn criterion(id: u32, name: &str, check: impl FnOnce() -> Result<String, String>) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    report(&format!(
        "criterion {id} {}: {name} ({secs:.1}s) {detail}",
        if ok { "PASS" } else { "FAIL" }
    ));
    ok
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn to_f64(x: &Tensor<f32>) -> Array2<f64> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    Array2::from_shape_vec((n, f), x.data().iter().map(|&v| v as f64).collect()).unwrap()
}

fn max_abs_diff_rows(a: &Tensor<f32>, b: &Tensor<f32>, frames: std::ops::Range<usize>) -> f64 {
    let f = a.shape()[1];
    let r = frames.start * f..frames.end * f;
    a.data()[r.clone()]
        .iter()
        .zip(&b.data()[r])
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

fn gradient_suite() -> Result<String, String> {
    let start = Instant::now();
    grad_suite::conv1d_gradients();
    grad_suite::linear_gradients();
    grad_suite::softmax_gradients();
    grad_suite::group_norm_gradients();
    grad_suite::elementwise_gradients();
    grad_suite::structural_gradients();
    grad_suite::local_attention_gradients();
    grad_suite::denoiser_parameter_gradients();
    let t = start.elapsed();
    ensure(t < Duration::from_secs(120), format!("took {t:?}"))?;
    Ok("kernels < 1e-6, denoiser < 1e-4".into())
}

fn qna_oracle() -> Result<String, String> {
    grad_suite::local_attention_matches_dense_banded_oracle();
    Ok("20 configurations within 1e-5".into())
}

fn receptive_field_law() -> Result<String, String> {
    let f = bundled_walk().features();
    let mut found = Vec::new();
    for depth in 1..=3 {
        // Default kernel, QnA window and block counts; narrow width keeps f64 probing fast.
        let cfg = DenoiserConfig {
            depth,
            num_channels: 16,
            head_dim: 4,
            ..DenoiserConfig::standard(f)
        };
        let measured = rf_probe::probe_receptive_field(&cfg, 70 + depth as u64);
        let analytic = receptive_field(&cfg);
        ensure(
            measured == analytic,
            format!("depth {depth}: measured {measured}, analytic {analytic}"),
        )?;
        found.push(measured);
    }
    let rf1 = receptive_field(&DenoiserConfig::standard(f));
    let n = bundled_walk().frames();
    ensure(2 * rf1 < n, format!("RF {rf1} is not below N/2 = {}", n / 2))?;
    Ok(format!("RF {found:?} for depth 1..3; default {rf1} < {n}/2"))
}

fn diffusion_identities() -> Result<String, String> {
    let s = NoiseSchedule::cosine(1000).map_err(|e| e.to_string())?;
    for t in 1..=1000 {
        ensure(
            s.alpha_bar(t) < s.alpha_bar(t - 1),
            format!("alpha_bar not decreasing at {t}"),
        )?;
    }
    let draws = 100_000;
    let x0 = Tensor::<f64>::full(&[draws, 1], 1.5);
    for t in [50, 300, 600, 900] {
        let eps = Tensor::<f64>::randn(&[draws, 1], &mut rng(t as u64 + 5));
        let x = q_sample(&x0, t, &eps, &s).unwrap();
        let mean = x.data().iter().sum::<f64>() / draws as f64;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws as f64;
        let (m, v) = (1.5 * s.alpha_bar(t).sqrt(), 1.0 - s.alpha_bar(t));
        ensure((mean / m - 1.0).abs() < 0.02, format!("t {t}: mean {mean} vs {m}"))?;
        ensure((var / v - 1.0).abs() < 0.02, format!("t {t}: variance {var} vs {v}"))?;
    }

    let f = 6;
    let model = random_model(tiny_config(f, 2), 3);
    let s = NoiseSchedule::cosine(50).unwrap();
    let cfg = SamplerConfig::default();
    let y = Tensor::<f64>::randn(&[32, f], &mut rng(4));
    let zeros = RoiMask::from_weights(32, f, vec![0.0; 32 * f]).unwrap();
    let pinned = compose(&mut model.predictor(), &s, &y, &zeros, 5, cfg).unwrap();
    let err = pinned
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(err < 1e-2, format!("pinned composition off by {err}"))?;
    let plain = generate(&mut model.predictor(), &s, 32, f, 6, cfg).unwrap();
    let ones = compose(&mut model.predictor(), &s, &y, &RoiMask::ones(32, f), 6, cfg).unwrap();
    ensure(ones == plain, "mask of ones differs from plain sampling")?;
    let spec = HarmonizationSpec {
        filter: LowPass::Zero,
        frames: None,
    };
    let zero = harmonize(&mut model.predictor(), &s, None, &y, &spec, 6, cfg).unwrap();
    ensure(zero == plain, "zero filter differs from plain sampling")?;
    Ok(format!(
        "moments within 2% at 1e5 draws; pin error {err:.1e}; degenerate hooks bitwise equal"
    ))
}

struct Smoke {
    ckpt: Checkpoint,
    report: TrainReport,
    elapsed: Duration,
}

fn smoke_training() -> Smoke {
    let motion = bundled_walk();
    let run = RunConfig::smoke();
    let model = run.model_config(motion.features()).unwrap();
    let start = Instant::now();
    let (ckpt, report) = train(&motion, model, run.train_config(), |_, _| Ok(())).unwrap();
    Smoke {
        ckpt,
        report,
        elapsed: start.elapsed(),
    }
}

fn end_to_end(smoke: &Smoke) -> Result<String, String> {
    let run = RunConfig::smoke();
    let n = smoke.report.records.len();
    ensure(n == run.num_steps, format!("{n} of {} steps recorded", run.num_steps))?;
    let first = smoke.report.mean_loss(0..100).unwrap();
    let last = smoke.report.mean_loss(n - 100..n).unwrap();
    let ratio = last / first;
    ensure(
        ratio < 0.2,
        format!("loss {first:.4} -> {last:.4} ({:.1}%)", 100.0 * ratio),
    )?;
    ensure(
        smoke.elapsed < Duration::from_secs(15 * 60),
        format!("training took {:?}", smoke.elapsed),
    )?;

    let ck = &smoke.ckpt;
    let schedule = ck.train.schedule().unwrap();
    let samples = generate_crowd(
        || ck.model.predictor(),
        &schedule,
        8,
        ck.train_frames(),
        ck.features(),
        run.seed,
        run.sampler(),
    )
    .map_err(|e| e.to_string())?;
    let input = to_f64(&ck.train_data);
    let gens: Vec<Array2<f64>> = samples.iter().map(to_f64).collect();
    let metrics = evaluate(&input, &gens, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let inter = inter_diversity(&gens, &EvalConfig::default().window).unwrap();
    for i in 0..samples.len() {
        for j in 0..i {
            ensure(samples[i] != samples[j], format!("samples {i} and {j} are identical"))?;
        }
    }
    let detail = format!(
        "loss {first:.4} -> {last:.4} ({:.1}%), {:.0}s; coverage {:.1}%, inter diversity {inter:.4}, HM {:.3}",
        100.0 * ratio,
        smoke.elapsed.as_secs_f64(),
        metrics.coverage,
        metrics.harmonic_mean
    );
    ensure(metrics.coverage > 80.0, format!("coverage too low: {detail}"))?;
    ensure(inter > 0.0, format!("no inter diversity: {detail}"))?;
    Ok(detail)
}

fn application_contracts(smoke: &Smoke) -> Result<String, String> {
    let run = RunConfig::smoke();
    let ck = &smoke.ckpt;
    let schedule = ck.train.schedule().unwrap();
    let y = &ck.train_data;
    let n = ck.train_frames();
    let keep = [0..100, n - 100..n];
    let mask = build_mask(n, &ck.layout, &keep, &[], run.ramp_frames).unwrap();
    let x = compose(&mut ck.model.predictor(), &schedule, y, &mask, 11, run.sampler()).map_err(|e| e.to_string())?;
    // Kept frames outside the ramp carry weight 0.
    let r = run.ramp_frames;
    let kept = max_abs_diff_rows(&x, y, 0..100 - r).max(max_abs_diff_rows(&x, y, n - 100 + r..n));
    ensure(kept < 1e-2, format!("kept frames moved by {kept}"))?;
    let interior = max_abs_diff_rows(&x, y, 100..n - 100);
    ensure(
        interior > 1e-1,
        format!("interior not synthesized (max change {interior})"),
    )?;

    let content = generate(
        &mut ck.model.predictor(),
        &schedule,
        n,
        ck.features(),
        12,
        run.sampler(),
    )
    .unwrap();
    let spec = HarmonizationSpec {
        filter: LowPass::Resample(1),
        frames: None,
    };
    let h = harmonize(
        &mut ck.model.predictor(),
        &schedule,
        None,
        &content,
        &spec,
        13,
        run.sampler(),
    )
    .map_err(|e| e.to_string())?;
    let herr = max_abs_diff_rows(&h, &content, 0..n);
    ensure(herr < 1e-4, format!("factor-1 harmonization off by {herr}"))?;

    let long = generate_long(
        &mut ck.model.predictor(),
        &schedule,
        6 * n,
        ck.features(),
        14,
        run.sampler(),
    )
    .map_err(|e| e.to_string())?;
    ensure(
        long.shape() == [6 * n, ck.features()],
        format!("long output {:?}", long.shape()),
    )?;
    ensure(long.all_finite(), "long output is not finite")?;
    Ok(format!(
        "kept error {kept:.1e}, interior change {interior:.2}; harmonization error {herr:.1e}; {} frames finite",
        6 * n
    ))
}

fn metric_oracle_checks() -> Result<String, String> {
    metric_oracles::coverage_matches_brute_force();
    metric_oracles::default_tau_is_percentile_of_self_distances();
    metric_oracles::percentile_hand_values();
    metric_oracles::global_diversity_matches_exhaustive_tessellation();
    metric_oracles::diversity_values_match_brute_force();
    metric_oracles::harmonic_mean_hand_vectors();
    Ok("coverage, tessellation, local, inter, intra and HM oracles agree".into())
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut v = vec!["sinmotion"];
    v.extend_from_slice(args);
    match main_with(v) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" "))),
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let (x, y) = (std::fs::read(a.join(name)), std::fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{name} differs after rerun")),
            _ => return Err(format!("{name} missing")),
        }
    }
    Ok(())
}

/// `step,loss,lr` columns; wall-clock time is not reproducible.
fn loss_columns(p: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(p).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a).to_string())
        .collect())
}

fn reproducibility() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| dir.path().join(s);
    let ps = |s: &str| p(s).to_str().unwrap().to_string();
    let tiny = [
        "--num_channels=16",
        "--head_dim=4",
        "--diffusion_steps=20",
        "--batch_size=2",
        "--num_steps=6",
        "--lr=1e-2",
        "--set=checkpoint_every=3",
    ];
    let mut args = vec![
        "train".to_string(),
        "--synthetic".into(),
        "--out-dir".into(),
        ps("train"),
    ];
    args.extend(tiny.iter().map(|s| s.to_string()));
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    cli(&["rerun", &ps("train/model.json"), "--out-dir", &ps("train2")])?;
    same_files(
        &p("train"),
        &p("train2"),
        &["model.ckpt", "model_step3.ckpt", "run_config.txt"],
    )?;
    ensure(
        loss_columns(&p("train/loss.csv"))? == loss_columns(&p("train2/loss.csv"))?,
        "loss log differs after rerun",
    )?;

    let ck = ps("train/model.ckpt");
    cli(&[
        "sample",
        "--checkpoint",
        &ck,
        "--count",
        "3",
        "--seed",
        "5",
        "--out-dir",
        &ps("s"),
    ])?;
    cli(&["rerun", &ps("s/sample_002.json"), "--out-dir", &ps("s2")])?;
    same_files(
        &p("s"),
        &p("s2"),
        &["sample_000.bvh", "sample_001.bvh", "sample_002.bvh"],
    )?;

    let reference = ps("s/sample_000.bvh");
    cli(&[
        "compose",
        "--checkpoint",
        &ck,
        "--reference",
        &reference,
        "--keep-frames",
        "0..50",
        "--out-dir",
        &ps("c"),
    ])?;
    cli(&["rerun", &ps("c/composed.json"), "--out-dir", &ps("c2")])?;
    same_files(&p("c"), &p("c2"), &["composed.bvh", "composed.json"])?;

    cli(&[
        "harmonize",
        "--checkpoint",
        &ck,
        "--content",
        &reference,
        "--window",
        "60..180",
        "--out-dir",
        &ps("h"),
    ])?;
    cli(&["rerun", &ps("h/harmonized.json"), "--out-dir", &ps("h2")])?;
    same_files(&p("h"), &p("h2"), &["harmonized.bvh", "harmonized.json"])?;

    let walk = p("walk.bvh");
    write_bvh_file(&bundled_walk(), &walk).map_err(|e| e.to_string())?;
    cli(&[
        "eval",
        "--input",
        walk.to_str().unwrap(),
        "--generated",
        &ps("s"),
        "--out",
        &ps("e/metrics.json"),
    ])?;
    let side = sinmotion::cli::Invocation::Eval {
        input: walk.canonicalize().unwrap(),
        generated: p("s").canonicalize().unwrap(),
        report_name: "metrics.json".into(),
        config: RunConfig::default(),
    };
    sinmotion::cli::run(&side, &p("e2")).map_err(|e| e.to_string())?;
    same_files(&p("e"), &p("e2"), &["metrics.json", "metrics.csv"])?;
    Ok("train, sample, compose, harmonize and eval reruns are bitwise identical".into())
}

fn parameter_count() -> Result<String, String> {
    let f = bundled_walk().features();
    let m = Denoiser::<f32>::new(DenoiserConfig::standard(f), &mut rng(0)).map_err(|e| e.to_string())?;
    let count = m.parameter_count();
    let rel = count as f64 / 5.26e6 - 1.0;
    ensure(rel.abs() <= 0.10, format!("{count} parameters ({:+.1}%)", 100.0 * rel))?;
    Ok(format!(
        "{count} parameters for {f} features ({:+.1}% of 5.26M)",
        100.0 * rel
    ))
}

#[test]
fn acceptance_criteria() {
    let mut results = vec![
        criterion(1, "gradient suite", gradient_suite),
        criterion(2, "windowed attention oracle", qna_oracle),
        criterion(3, "receptive-field law", receptive_field_law),
        criterion(4, "diffusion identities", diffusion_identities),
    ];
    let smoke = catch_unwind(smoke_training);
    let smoke = smoke.as_ref().map_err(|_| "smoke training failed".to_string());
    results.push(criterion(5, "end-to-end smoke training", || end_to_end(smoke.clone()?)));
    results.push(criterion(6, "application contracts", || {
        application_contracts(smoke.clone()?)
    }));
    results.push(criterion(7, "metric oracles", metric_oracle_checks));
    results.push(criterion(8, "reproducibility from sidecars", reproducibility));
    results.push(criterion(9, "parameter count", parameter_count));
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    report(&format!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    ));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
