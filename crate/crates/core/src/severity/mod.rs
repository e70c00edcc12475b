//! Gaussian bulk plus ordered Uniform tail layers, fitted by constrained EM
//! over a grid of candidate layer endpoints.

mod em;
mod grid;
mod kmeans;
mod memr;
mod pava;

pub use em::{em_run, EmTrace};
pub use grid::{build_base_grid, enumerate_candidates, BaseGrid, Candidate};
pub use kmeans::{trimmed_count, trimmed_kmeans, KMeansFit};
pub use memr::{
    fit_cell, initial_model, model_select, mu_memr, parameter_count, MemrFit, SelectionRow, SelectionTable,
};
pub use pava::{pava_nonincreasing, pava_nonincreasing_equal};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeverityError {
    #[error("invalid severity configuration: {0}")]
    InvalidConfig(String),
    #[error("trimmed k-means left an empty or collapsed cluster")]
    DegenerateClusters,
    #[error("no trimmed points on the {0} side")]
    NoTailPoints(&'static str),
    #[error("no endpoint candidate satisfies the width and separation constraints")]
    NoFeasibleCandidate,
    #[error("every EM run violated tail separation after convergence")]
    AllRunsRejected,
    #[error("initial model violates a constraint: {0}")]
    ConstraintViolatedAtInit(String),
    #[error("log-likelihood became non-finite at iteration {0}")]
    NonFiniteLikelihood(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeverityConfig {
    /// Scale floor exponent: every scale is at least exp(-n^d).
    pub d: f64,
    /// Trimming fraction.
    pub alpha: f64,
    /// Tail separation in bulk standard deviations.
    pub delta: f64,
    /// Left grid size.
    pub q: usize,
    /// Right grid size.
    pub p: usize,
    /// Relative log-likelihood tolerance.
    pub eps: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub pi_floor: f64,
}

impl Default for SeverityConfig {
    fn default() -> Self {
        Self { d: 0.5, alpha: 0.05, delta: 1.96, q: 12, p: 10, eps: 1e-6, max_iter: 500, restarts: 10, pi_floor: 1e-12 }
    }
}

impl SeverityConfig {
    pub fn validate(&self) -> Result<(), SeverityError> {
        let bad = |m: &str| Err(SeverityError::InvalidConfig(m.into()));
        if !(self.d > 0.0) {
            return bad("d must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be nonnegative");
        }
        if self.q == 0 || self.p == 0 {
            return bad("q and p must be at least 1");
        }
        if !(self.eps > 0.0) || self.max_iter == 0 || self.restarts == 0 {
            return bad("eps, max_iter and restarts must be positive");
        }
        if !(self.pi_floor > 0.0 && self.pi_floor < 1e-3) {
            return bad("pi_floor must lie in (0, 1e-3)");
        }
        Ok(())
    }

    /// Lower bound exp(-n^d) on every component scale.
    pub fn scale_floor(&self, n: usize) -> f64 {
        (-(n as f64).powf(self.d)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub sd: f64,
    pub pi: f64,
}

impl GaussianComponent {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * PI).ln()
    }
}

/// One tail layer. Left layers own `(lo, hi]`, right layers `[lo, hi)`;
/// the outermost layer on each side is also closed at its pinned extreme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformLayer {
    pub lo: f64,
    pub hi: f64,
    pub pi: f64,
}

impl UniformLayer {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Index of the layer containing `x`, counted from the bulk outward.
pub fn locate_layer(left: &[UniformLayer], right: &[UniformLayer], x: f64) -> Option<(Side, usize)> {
    let last_l = left.len().checked_sub(1);
    for (i, l) in left.iter().enumerate() {
        let above_lo = if Some(i) == last_l { x >= l.lo } else { x > l.lo };
        if above_lo && x <= l.hi {
            return Some((Side::Left, i));
        }
    }
    let last_r = right.len().checked_sub(1);
    for (i, r) in right.iter().enumerate() {
        let below_hi = if Some(i) == last_r { x <= r.hi } else { x < r.hi };
        if x >= r.lo && below_hi {
            return Some((Side::Right, i));
        }
    }
    None
}

/// Fitted severity mixture. Gaussians ascend by mean; layers on each side
/// are listed from the bulk outward, so `left_layers[0]` is the shallowest
/// left layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    pub gaussians: Vec<GaussianComponent>,
    pub left_layers: Vec<UniformLayer>,
    pub right_layers: Vec<UniformLayer>,
    #[serde(rename = "loglik")]
    pub log_lik: f64,
    pub n: usize,
    pub config: SeverityConfig,
}

impl SeverityModel {
    pub fn g(&self) -> usize {
        self.gaussians.len()
    }

    pub fn m_left(&self) -> usize {
        self.left_layers.len()
    }

    pub fn m_right(&self) -> usize {
        self.right_layers.len()
    }

    pub fn components(&self) -> usize {
        self.g() + self.m_left() + self.m_right()
    }

    pub fn locate(&self, x: f64) -> Option<(Side, usize)> {
        locate_layer(&self.left_layers, &self.right_layers, x)
    }

    /// Log of the prior-weighted density of every component at `x`, in the
    /// order gaussians, left layers, right layers.
    fn component_ln_terms(&self, x: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.gaussians.iter().map(|g| g.pi.ln() + g.ln_pdf(x)).collect();
        out.resize(self.components(), f64::NEG_INFINITY);
        if let Some((side, i)) = self.locate(x) {
            let (offset, layer) = match side {
                Side::Left => (self.g(), &self.left_layers[i]),
                Side::Right => (self.g() + self.m_left(), &self.right_layers[i]),
            };
            out[offset + i] = layer.pi.ln() - layer.width().ln();
        }
        out
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        log_sum_exp(&self.component_ln_terms(x))
    }

    /// Posterior component probabilities at `x`, same order as
    /// `component_ln_terms`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let terms = self.component_ln_terms(x);
        let total = log_sum_exp(&terms);
        terms.iter().map(|t| (t - total).exp()).collect()
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter().map(|&x| self.logpdf(x)).sum()
    }

    /// Layer probabilities ordered deepest-left first, then right layers
    /// from the bulk outward.
    pub fn layer_probabilities(&self) -> Vec<f64> {
        self.left_layers.iter().rev().chain(&self.right_layers).map(|l| l.pi).collect()
    }

    /// Checks mixing, scale, separation, coverage and monotonicity
    /// constraints. `n` sets the scale floor.
    pub fn check_constraints(&self, n: usize) -> Result<(), String> {
        let floor = self.config.scale_floor(n);
        let all_pi: Vec<f64> = self
            .gaussians
            .iter()
            .map(|g| g.pi)
            .chain(self.left_layers.iter().chain(&self.right_layers).map(|l| l.pi))
            .collect();
        if all_pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) && all_pi.len() > 1 {
            return Err("mixing probability outside (0, 1)".into());
        }
        let total: f64 = all_pi.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(format!("mixing probabilities sum to {total}"));
        }
        if self.gaussians.is_empty() {
            return Err("no gaussian component".into());
        }
        if self.gaussians.windows(2).any(|w| w[0].mean > w[1].mean) {
            return Err("gaussian means not ascending".into());
        }
        if self.gaussians.iter().any(|g| !(g.sd >= floor)) {
            return Err("gaussian scale below floor".into());
        }
        let sqrt12 = 12f64.sqrt();
        for l in self.left_layers.iter().chain(&self.right_layers) {
            if !(l.width() / sqrt12 >= floor) {
                return Err(format!("layer [{}, {}] narrower than the scale floor", l.lo, l.hi));
            }
        }
        let first = self.gaussians[0];
        let last = self.gaussians[self.g() - 1];
        if let Some(l) = self.left_layers.first() {
            if l.hi > first.mean - self.config.delta * first.sd {
                return Err("left tail too close to the bulk".into());
            }
        }
        if let Some(r) = self.right_layers.first() {
            if r.lo < last.mean + self.config.delta * last.sd {
                return Err("right tail too close to the bulk".into());
            }
        }
        if self.left_layers.windows(2).any(|w| w[0].lo != w[1].hi) {
            return Err("left layers do not tile".into());
        }
        if self.right_layers.windows(2).any(|w| w[0].hi != w[1].lo) {
            return Err("right layers do not tile".into());
        }
        if self.left_layers.windows(2).any(|w| w[0].pi < w[1].pi)
            || self.right_layers.windows(2).any(|w| w[0].pi < w[1].pi)
        {
            return Err("layer probabilities not nonincreasing outward".into());
        }
        Ok(())
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}
