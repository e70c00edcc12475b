use super::{locate_layer, pava_nonincreasing_equal, SeverityError, SeverityModel, Side};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Observed log-likelihood at the start and after every update.
    pub log_liks: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const NO_LAYER: u32 = u32::MAX;

struct Sums {
    log_lik: f64,
    weight: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    layer: Vec<f64>,
}

fn e_step(data: &[f64], owner: &[u32], model: &SeverityModel, buf: &mut Vec<f64>) -> Sums {
    let g = model.g();
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    let consts: Vec<(f64, f64, f64)> =
        model.gaussians.iter().map(|c| (c.mean, c.pi.ln() - c.sd.ln() - half_ln_2pi, 0.5 / (c.sd * c.sd))).collect();
    let layer_consts: Vec<f64> =
        model.left_layers.iter().chain(&model.right_layers).map(|l| l.pi.ln() - l.width().ln()).collect();
    let mut s = Sums {
        log_lik: 0.0,
        weight: vec![0.0; g],
        first: vec![0.0; g],
        second: vec![0.0; g],
        layer: vec![0.0; layer_consts.len()],
    };
    for (&x, &own) in data.iter().zip(owner) {
        buf.clear();
        buf.extend(consts.iter().map(|(m, c, k)| c - (x - m) * (x - m) * k));
        if own != NO_LAYER {
            buf.push(layer_consts[own as usize]);
        }
        let top = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for t in buf.iter_mut() {
            *t = (*t - top).exp();
            total += *t;
        }
        s.log_lik += top + total.ln();
        for k in 0..g {
            let tau = buf[k] / total;
            let dx = x - consts[k].0;
            s.weight[k] += tau;
            s.first[k] += tau * dx;
            s.second[k] += tau * dx * dx;
        }
        if own != NO_LAYER {
            s.layer[own as usize] += buf[g] / total;
        }
    }
    s
}

/// Lifts probabilities below `floor` to `floor` and rescales the rest so
/// the vector still sums to one.
fn apply_floor(pi: &mut [f64], floor: f64) {
    let mut fixed = vec![false; pi.len()];
    loop {
        let mut changed = false;
        for (p, f) in pi.iter_mut().zip(fixed.iter_mut()) {
            if !*f && *p < floor {
                *p = floor;
                *f = true;
                changed = true;
            }
        }
        let free: f64 = pi.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(p, _)| p).sum();
        let target = 1.0 - floor * fixed.iter().filter(|f| **f).count() as f64;
        if free > 0.0 {
            for (p, f) in pi.iter_mut().zip(&fixed) {
                if !f {
                    *p *= target / free;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

fn m_step(model: &mut SeverityModel, s: &Sums, n: usize, scale_floor: f64) {
    let g = model.g();
    for (k, c) in model.gaussians.iter_mut().enumerate() {
        let w = s.weight[k];
        if !(w > 0.0) {
            continue;
        }
        let shift = s.first[k] / w;
        c.mean += shift;
        c.sd = (s.second[k] / w - shift * shift).max(0.0).sqrt().max(scale_floor);
    }
    let nf = n as f64;
    let ml = model.m_left();
    let mut pi: Vec<f64> = s.weight.iter().chain(&s.layer).map(|w| w / nf).collect();
    let left = pava_nonincreasing_equal(&pi[g..g + ml]);
    pi[g..g + ml].copy_from_slice(&left);
    let right = pava_nonincreasing_equal(&pi[g + ml..]);
    pi[g + ml..].copy_from_slice(&right);
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    apply_floor(&mut pi, model.config.pi_floor);
    let mut it = pi.into_iter();
    for c in model.gaussians.iter_mut() {
        c.pi = it.next().unwrap();
    }
    for l in model.left_layers.iter_mut().chain(model.right_layers.iter_mut()) {
        l.pi = it.next().unwrap();
    }
    model.gaussians.sort_by(|a, b| a.mean.total_cmp(&b.mean));
}

/// Constrained EM with the layer endpoints held fixed. Stops when the
/// log-likelihood changes by at most `eps * |loglik|` or after `max_iter`
/// updates.
pub fn em_run(data: &[f64], init: &SeverityModel) -> Result<(SeverityModel, EmTrace), SeverityError> {
    let n = data.len();
    init.check_constraints(n).map_err(SeverityError::ConstraintViolatedAtInit)?;
    let cfg = init.config.clone();
    let scale_floor = cfg.scale_floor(n);
    let ml = init.m_left() as u32;
    let owner: Vec<u32> = data
        .iter()
        .map(|&x| match locate_layer(&init.left_layers, &init.right_layers, x) {
            Some((Side::Left, i)) => i as u32,
            Some((Side::Right, i)) => ml + i as u32,
            None => NO_LAYER,
        })
        .collect();

    let mut model = init.clone();
    model.n = n;
    let mut buf = Vec::with_capacity(model.g() + 1);
    let mut trace = EmTrace { log_liks: Vec::new(), iterations: 0, converged: false };
    loop {
        let sums = e_step(data, &owner, &model, &mut buf);
        if !sums.log_lik.is_finite() {
            return Err(SeverityError::NonFiniteLikelihood(trace.iterations));
        }
        model.log_lik = sums.log_lik;
        if let Some(&prev) = trace.log_liks.last() {
            if (sums.log_lik - prev).abs() <= cfg.eps * sums.log_lik.abs() {
                trace.log_liks.push(sums.log_lik);
                trace.converged = true;
                break;
            }
        }
        trace.log_liks.push(sums.log_lik);
        if trace.iterations == cfg.max_iter {
            break;
        }
        m_step(&mut model, &sums, n, scale_floor);
        trace.iterations += 1;
    }
    Ok((model, trace))
}
