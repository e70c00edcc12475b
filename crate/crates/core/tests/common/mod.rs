#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use telerisk_core::classifier::LabeledProfile;
use telerisk_core::risk::MltcProfile;
use telerisk_core::severity::{GaussianComponent, SeverityConfig, SeverityModel, UniformLayer};

/// Weighted nonincreasing projection by exhaustive search: the optimum is
/// constant on contiguous blocks at the block's weighted mean, so try every
/// block partition whose means do not increase and keep the cheapest.
pub fn pava_brute(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fitted = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev = f64::INFINITY;
        let mut ok = true;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let w: f64 = weights[start..end].iter().sum();
                let m = values[start..end].iter().zip(&weights[start..end]).map(|(v, w)| v * w).sum::<f64>() / w;
                if m > prev + 1e-12 {
                    ok = false;
                    break;
                }
                prev = m;
                fitted.extend(std::iter::repeat_n(m, end - start));
                start = end;
            }
        }
        if !ok {
            continue;
        }
        let sse: f64 = fitted.iter().zip(values).zip(weights).map(|((f, v), w)| w * (f - v) * (f - v)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fitted));
        }
    }
    best.expect("the single-block partition is always feasible").1
}

/// Two Gaussians and two uniform layers per side.
pub fn reference_model() -> SeverityModel {
    SeverityModel {
        gaussians: vec![
            GaussianComponent { mean: -0.015, sd: 0.006, pi: 0.45 },
            GaussianComponent { mean: 0.015, sd: 0.006, pi: 0.45 },
        ],
        left_layers: vec![
            UniformLayer { lo: -0.12, hi: -0.04, pi: 0.03 },
            UniformLayer { lo: -0.2, hi: -0.12, pi: 0.02 },
        ],
        right_layers: vec![UniformLayer { lo: 0.04, hi: 0.12, pi: 0.03 }, UniformLayer { lo: 0.12, hi: 0.2, pi: 0.02 }],
        log_lik: f64::NAN,
        n: 0,
        config: SeverityConfig::default(),
    }
}

pub fn draw(model: &SeverityModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.random();
        let mut x = None;
        for g in &model.gaussians {
            if u < g.pi {
                x = Some(Normal::new(g.mean, g.sd).unwrap().sample(rng));
                break;
            }
            u -= g.pi;
        }
        if x.is_none() {
            for l in model.left_layers.iter().chain(&model.right_layers) {
                if u < l.pi {
                    x = Some(rng.random_range(l.lo..l.hi));
                    break;
                }
                u -= l.pi;
            }
        }
        out.push(x.unwrap_or_else(|| {
            let g = &model.gaussians[0];
            Normal::new(g.mean, g.sd).unwrap().sample(rng)
        }));
    }
    out
}

fn descending(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// A random starting model with two Gaussians and two layers per side that
/// passes every constraint and covers the data range.
pub fn random_feasible_init(data: &[f64], rng: &mut ChaCha8Rng) -> SeverityModel {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cfg = SeverityConfig::default();
    loop {
        let mut means = [rng.random_range(-0.03..0.0), rng.random_range(0.0..0.03)];
        means.sort_by(f64::total_cmp);
        let sds = [rng.random_range(0.003..0.015), rng.random_range(0.003..0.015)];
        let left_in = means[0] - cfg.delta * sds[0];
        let right_in = means[1] + cfg.delta * sds[1];
        if !(lo * 0.5 < left_in.min(-0.001) && right_in.max(0.001) < hi * 0.5) {
            continue;
        }
        let l1 = rng.random_range(lo * 0.5..left_in.min(-0.001));
        let l2 = rng.random_range(lo * 0.95..l1);
        let r1 = rng.random_range(right_in.max(0.001)..hi * 0.5);
        let r2 = rng.random_range(r1..hi * 0.95);
        let bulk = rng.random_range(0.7..0.95);
        let g_share = rng.random_range(0.3..0.7);
        let lw = descending(rng, 2);
        let rw = descending(rng, 2);
        let tail_total: f64 = lw.iter().chain(&rw).sum();
        let scale = (1.0 - bulk) / tail_total;
        let model = SeverityModel {
            gaussians: vec![
                GaussianComponent { mean: means[0], sd: sds[0], pi: bulk * g_share },
                GaussianComponent { mean: means[1], sd: sds[1], pi: bulk * (1.0 - g_share) },
            ],
            left_layers: vec![
                UniformLayer { lo: l2, hi: l1, pi: lw[0] * scale },
                UniformLayer { lo, hi: l2, pi: lw[1] * scale },
            ],
            right_layers: vec![
                UniformLayer { lo: r1, hi: r2, pi: rw[0] * scale },
                UniformLayer { lo: r2, hi, pi: rw[1] * scale },
            ],
            log_lik: f64::NAN,
            n: data.len(),
            config: cfg.clone(),
        };
        if model.check_constraints(data.len()).is_ok() {
            return model;
        }
    }
}

/// Sample for the endpoint-recovery check: Gaussian bulk plus tail values
/// on a 0.005 lattice so the layer endpoints are observed values. Returns
/// the data and the number of tail points.
pub fn lattice_mixture(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let left = Normal::new(-0.015, 0.005).unwrap();
    let right = Normal::new(0.015, 0.005).unwrap();
    let mut tail = 0;
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.455 {
                left.sample(rng)
            } else if u < 0.91 {
                right.sample(rng)
            } else {
                tail += 1;
                let v = u - 0.91;
                let (sign, inner) = if v < 0.045 { (-1.0, v) } else { (1.0, v - 0.045) };
                let mag = if inner < 0.03 {
                    0.04 + 0.005 * rng.random_range(0..16) as f64
                } else {
                    0.12 + 0.005 * rng.random_range(0..=16) as f64
                };
                sign * mag
            }
        })
        .collect();
    (data, tail)
}

/// Per-driver trips with two normal and two risky trips. `lift` scales the
/// risky layer rates; 1.0 gives no class signal.
pub fn profile_cohort(drivers: usize, lift: f64, exposure: u64, rng: &mut ChaCha8Rng) -> Vec<LabeledProfile> {
    let base = [0.002, 0.006, 0.008, 0.003];
    let mut out = Vec::new();
    for d in 0..drivers {
        let frailty: f64 = rng.random_range(0.8..1.25);
        for (k, risky) in [false, true, false, true].into_iter().enumerate() {
            let counts = base
                .iter()
                .enumerate()
                .map(|(m, r)| {
                    let boost = if risky && (m == 0 || m == 3) { lift } else { 1.0 };
                    let mean = r * boost * frailty * exposure as f64;
                    Poisson::new(mean).unwrap().sample(rng) as u64
                })
                .collect();
            out.push(LabeledProfile {
                profile: MltcProfile {
                    driver_id: format!("D{d:02}"),
                    trip_id: format!("D{d:02}-T{k}"),
                    exposure,
                    counts,
                },
                risky,
            });
        }
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
