//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any FAIL.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::{Duration, Instant};
use telerisk_core::classifier::{evaluate_lodo, evaluate_repeated_kfold, Ablation, CvConfig, ScoreOptions};
use telerisk_core::risk::{credibility_weights, severity_weights, DriverPosterior, GammaPrior, MltcProfile};
use telerisk_core::severity::{em_run, mu_memr, pava_nonincreasing, SeverityConfig};
use telerisk_core::wavelet::{filter_width, modwt_forward, modwt_inverse};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Box<dyn FnOnce() -> Outcome>;

fn timed(limit: Duration, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = f();
    let took = start.elapsed();
    match result {
        Ok(msg) if took <= limit => Outcome::Pass(format!("{msg} [{:.1}s]", took.as_secs_f64())),
        Ok(msg) => Outcome::Fail(format!("{msg} but took {:.1}s (limit {}s)", took.as_secs_f64(), limit.as_secs())),
        Err(msg) => Outcome::Fail(format!("{msg} [{:.1}s]", took.as_secs_f64())),
    }
}

fn modwt_exactness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rec, mut worst_energy) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let levels = rng.random_range(1..=6);
        let len = rng.random_range(filter_width(4, levels).max(16)..=2048);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = modwt_forward(&x, levels).map_err(|e| e.to_string())?;
        let back = modwt_inverse(&d);
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let diff: f64 = x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum();
        worst_rec = worst_rec.max((diff / norm).sqrt());
        let parts: f64 = d.wavelet_coeffs.iter().flatten().chain(&d.scaling_coeffs).map(|v| v * v).sum();
        worst_energy = worst_energy.max(common::rel_err(parts, norm));
    }
    let msg = format!("200 signals, max reconstruction rel err {worst_rec:.1e}, max energy rel err {worst_energy:.1e}");
    if worst_rec <= 1e-9 && worst_energy <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reference_weights() -> Result<String, String> {
    let pis_pct = [0.071, 0.322, 0.547, 1.591, 1.142, 0.516, 0.246, 0.183, 0.092];
    let expected = [0.4726, 0.0360, 0.0147, 0.0024, 0.0042, 0.0162, 0.0569, 0.0938, 0.3032];
    let pis: Vec<f64> = pis_pct.iter().map(|p| p / 100.0).collect();
    let w = severity_weights(&pis, 1.7).map_err(|e| e.to_string())?;
    let worst = w.weights.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let msg = format!("max |w - reference| = {worst:.2e}");
    if worst <= 2e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Posterior mean and variance of a Gamma(a, b) prior times a Poisson
/// likelihood, by Simpson's rule on a uniform lambda grid.
fn grid_posterior(a: f64, b: f64, n: u64, e: f64) -> (f64, f64) {
    let (shape, rate) = (a + n as f64, b + e);
    let upper = 20.0 * shape / rate;
    let steps = 100_000;
    let h = upper / steps as f64;
    let log_kernel = |l: f64| (a - 1.0) * l.ln() - b * l + n as f64 * l.ln() - e * l;
    let peak = log_kernel(((shape - 1.0) / rate).max(h));
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=steps {
        let l = i as f64 * h;
        let f = if l == 0.0 { 0.0 } else { (log_kernel(l) - peak).exp() };
        let c = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        z += c * f;
        m1 += c * f * l;
        m2 += c * f * l * l;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

fn conjugacy() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_blend) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let a = rng.random_range(2.0..30.0);
        let b = rng.random_range(10.0..5000.0);
        let n = rng.random_range(0..60u64);
        let e = rng.random_range(1..3000u64);
        let prior = GammaPrior { alpha: vec![a], beta: vec![b], omega: 0.05, fallback_used: vec![false] };
        let mut post = DriverPosterior::new("D", &prior);
        post.update(&MltcProfile { driver_id: "D".into(), trip_id: format!("t{case}"), exposure: e, counts: vec![n] })
            .map_err(|err| err.to_string())?;
        let mean = post.posterior_mean(0);
        let var = post.alpha(0) / (post.beta(0) * post.beta(0));
        let (gm, gv) = grid_posterior(a, b, n, e as f64);
        worst = worst.max(common::rel_err(mean, gm)).max(common::rel_err(var, gv));
        let (past, new) = credibility_weights(b, e as f64);
        let blend = past * a / b + new * n as f64 / e as f64;
        worst_blend = worst_blend.max(common::rel_err(blend, mean));
    }
    let msg = format!("50 cases, max moment rel err {worst:.1e}, max blend rel err {worst_blend:.1e}");
    if worst <= 1e-6 && worst_blend <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn pava_oracle() -> Result<String, String> {
    let grid: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0u64;
    let mut worst = 0.0f64;
    for len in 1..=5u32 {
        let total = 21usize.pow(len);
        let mut values = vec![0.0; len as usize];
        for code in 0..total {
            let mut c = code;
            for v in values.iter_mut() {
                *v = grid[c % 21];
                c /= 21;
            }
            let weights: Vec<f64> = (0..len).map(|_| rng.random_range(0.1..3.0)).collect();
            let fast = pava_nonincreasing(&values, &weights);
            let slow = common::pava_brute(&values, &weights);
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
            checked += 1;
        }
    }
    let msg = format!("{checked} inputs, max abs diff {worst:.1e}");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn em_monotone() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = common::draw(&common::reference_model(), 3000, &mut rng);
    let mut worst_drop = 0.0f64;
    let mut iterations = 0;
    for _ in 0..100 {
        let init = common::random_feasible_init(&data, &mut rng);
        let (_, trace) = em_run(&data, &init).map_err(|e| e.to_string())?;
        iterations += trace.iterations;
        for w in trace.log_liks.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    let msg = format!("100 inits, {iterations} EM steps, largest decrease {worst_drop:.1e}");
    if worst_drop <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn memr_recovery() -> Result<String, String> {
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (data, tail) = common::lattice_mixture(20_000, &mut rng);
        let cfg = SeverityConfig { alpha: tail as f64 / data.len() as f64, q: 6, p: 6, ..Default::default() };
        let fit = match mu_memr(&data, 2, 2, 2, &cfg, seed) {
            Ok(f) => f,
            Err(e) => {
                notes.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let m = &fit.model;
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        let ends = close(m.left_layers[0].hi, -0.04)
            && close(m.left_layers[0].lo, -0.12)
            && close(m.left_layers[1].lo, -0.2)
            && close(m.right_layers[0].lo, 0.04)
            && close(m.right_layers[0].hi, 0.12)
            && close(m.right_layers[1].hi, 0.2);
        let truth = [0.03, 0.015];
        let pis_ok = m
            .left_layers
            .iter()
            .zip(&truth)
            .chain(m.right_layers.iter().zip(&truth))
            .all(|(l, t)| common::rel_err(l.pi, *t) <= 0.15);
        if ends && pis_ok {
            hits += 1;
        } else {
            notes.push(format!("seed {seed}: endpoints {ends}, probabilities {pis_ok}"));
        }
    }
    let msg = format!(
        "{hits}/20 seeds recovered{}",
        if notes.is_empty() { String::new() } else { format!(" ({})", notes.join("; ")) }
    );
    if hits >= 18 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn classifier_behaviour() -> Result<String, String> {
    let cv = CvConfig { r_out: 20, seed: 9, ..Default::default() };
    let pis = vec![0.002, 0.006, 0.008, 0.003];
    let opts = |ablation, gamma| ScoreOptions { ablation, gamma, layer_pis: pis.clone(), omega: 0.05 };

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut null = common::profile_cohort(20, 1.0, 2000, &mut rng);
    let mut labels: Vec<bool> = null.iter().map(|l| l.risky).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng);
    for (l, r) in null.iter_mut().zip(labels) {
        l.risky = r;
    }
    let null_ba =
        evaluate_repeated_kfold(&null, &opts(Ablation::Weighted, 1.7), &cv).map_err(|e| e.to_string())?.mean_ba;

    let separable = common::profile_cohort(10, 6.0, 3000, &mut rng);
    let lodo_ba = evaluate_lodo(&separable, &opts(Ablation::Weighted, 1.7), &cv).map_err(|e| e.to_string())?.mean_ba;

    let b = evaluate_repeated_kfold(&separable, &opts(Ablation::Uniform, 0.0), &cv).map_err(|e| e.to_string())?;
    let c = evaluate_repeated_kfold(&separable, &opts(Ablation::Weighted, 0.0), &cv).map_err(|e| e.to_string())?;
    let same = b.folds.len() == c.folds.len()
        && b.folds
            .iter()
            .zip(&c.folds)
            .all(|(x, y)| x.ba.to_bits() == y.ba.to_bits() && x.tau.to_bits() == y.tau.to_bits())
        && b.predictions.iter().zip(&c.predictions).all(|(x, y)| x.p_risky.to_bits() == y.p_risky.to_bits());

    let msg = format!("null k-fold BA {null_ba:.3}, separable LODO BA {lodo_ba:.3}, C(gamma=0) == B bitwise: {same}");
    if (0.4..=0.6).contains(&null_ba) && lodo_ba >= 0.95 && same {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn uah_reproduction(root: PathBuf) -> Result<String, String> {
    use telerisk_core::pipeline::{GammaSetting, Pipeline, PipelineConfig, Search, Stage};
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::default();
    cfg.input.uah_root = Some(root);
    cfg.output_dir = out.path().to_path_buf();
    cfg.severity.q = 12;
    cfg.severity.p = 10;
    cfg.selection.g = vec![1, 2];
    cfg.selection.m_left = (1..=8).collect();
    cfg.selection.m_right = (1..=6).collect();
    cfg.risk.gamma = GammaSetting::Search(Search::Search);
    let pipeline = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    for stage in
        [Stage::Ingest, Stage::Decompose, Stage::Portfolio, Stage::Fit, Stage::Weights, Stage::Score, Stage::Classify]
    {
        pipeline.run(stage).map_err(|e| format!("{stage}: {e}"))?;
    }
    let read =
        |name: &str| telerisk_core::pipeline::read_artifact_csv(&out.path().join(name)).map_err(|e| e.to_string());
    let mut failures = Vec::new();

    let (_, pool) = read("portfolio.csv")?;
    if common::rel_err(pool.len() as f64, 38_219.0) > 0.03 {
        failures.push(format!("pool size {}", pool.len()));
    }
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("model.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let sel = &model["selection"];
    if (sel["Mminus"].as_u64(), sel["G"].as_u64(), sel["Mplus"].as_u64()) != (Some(4), Some(2), Some(5)) {
        failures.push(format!("BIC picked ({}, {}, {})", sel["Mminus"], sel["G"], sel["Mplus"]));
    }
    let bulk = [(-0.0158, 0.0088), (0.0156, 0.0088)];
    for (g, (mean, sd)) in model["gaussians"].as_array().into_iter().flatten().zip(bulk) {
        let (m, s) = (g["mean"].as_f64().unwrap_or(f64::NAN), g["sd"].as_f64().unwrap_or(f64::NAN));
        if !(common::rel_err(m, mean) <= 0.1 && common::rel_err(s, sd) <= 0.1) {
            failures.push(format!("gaussian ({m:.4}, {s:.4})"));
        }
    }
    let (_, scores) = read("scores.csv")?;
    let secondary: std::collections::BTreeSet<String> =
        read("profiles.csv")?.1.iter().filter(|r| r.get(4) == Some("secondary")).map(|r| r[1].to_string()).collect();
    let (mut max_normal, mut min_risky) = (f64::NEG_INFINITY, f64::INFINITY);
    for r in scores.iter().filter(|r| secondary.contains(&r[1])) {
        let v: f64 = r[4].parse().unwrap_or(f64::NAN);
        if r[2].starts_with("normal") {
            max_normal = max_normal.max(v);
        } else {
            min_risky = min_risky.min(v);
        }
    }
    if !(min_risky > max_normal) {
        failures.push("secondary-road ranking overlaps".into());
    }
    let reference = [("kfold", [72.6, 75.0, 88.2]), ("lodo", [76.0, 76.0, 91.3])];
    let (_, summary) = read("cv_summary.csv")?;
    for (scheme, values) in reference {
        for (code, target) in ["A", "B", "C"].iter().zip(values) {
            let got = summary
                .iter()
                .find(|r| &r[0] == scheme && &r[1] == *code)
                .and_then(|r| r[3].parse::<f64>().ok())
                .unwrap_or(f64::NAN)
                * 100.0;
            if !((got - target).abs() <= 4.0) {
                failures.push(format!("{scheme} {code} BA {got:.1}"));
            }
        }
    }
    let weights: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("weights.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let gamma = weights["gamma"].as_f64().unwrap_or(f64::NAN);
    if !((gamma - 1.7).abs() <= 0.1 + 1e-9) {
        failures.push(format!("gamma {gamma}"));
    }
    if failures.is_empty() {
        Ok("pool size, selection, Gaussians, ranking, BA and gamma within tolerance".into())
    } else {
        Err(failures.join("; "))
    }
}

fn main() {
    // the harness passes test filters and flags; none apply here
    let criteria: Vec<(&str, Check)> = vec![
        ("1 MODWT exactness", Box::new(|| timed(Duration::from_secs(5), modwt_exactness))),
        ("2 severity weights", Box::new(|| timed(Duration::from_secs(1), reference_weights))),
        ("3 conjugacy oracle", Box::new(|| timed(Duration::from_secs(5), conjugacy))),
        ("4 PAVA oracle", Box::new(|| timed(Duration::from_secs(30), pava_oracle))),
        ("5 EM monotonicity", Box::new(|| timed(Duration::from_secs(60), em_monotone))),
        ("6 MU-MEMR recovery", Box::new(|| timed(Duration::from_secs(300), memr_recovery))),
        ("7 classifier null/separable", Box::new(|| timed(Duration::from_secs(120), classifier_behaviour))),
        (
            "8 UAH reproduction",
            Box::new(|| match std::env::var_os("TELERISK_UAH_ROOT") {
                Some(root) => timed(Duration::MAX, || uah_reproduction(PathBuf::from(root))),
                None => Outcome::Skip("set TELERISK_UAH_ROOT to the UAH-DriveSet directory to run".into()),
            }),
        ),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Outcome::Pass(m) => println!("PASS  criterion {name}: {m}"),
            Outcome::Fail(m) => {
                failed += 1;
                println!("FAIL  criterion {name}: {m}");
            }
            Outcome::Skip(m) => println!("SKIP  criterion {name}: {m}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
