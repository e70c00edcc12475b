//! Multi-layer tail counts, empirical-Bayes Gamma priors, severity weights
//! and the Poisson-Gamma trip and driver risk indices.

use crate::severity::{locate_layer, SeverityModel, Side, UniformLayer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("need at least two profiles with positive exposure, got {0}")]
    TooFewProfiles(usize),
    #[error("winsorization rate {0} outside [0, 0.5)")]
    BadOmega(f64),
    #[error("retained index {index} outside trip of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("profile for driver {found} applied to driver {expected}")]
    DriverMismatch { expected: String, found: String },
    #[error("driver {0} has no trips yet")]
    NoTripsYet(String),
    #[error("layer count mismatch: expected {expected}, found {found}")]
    LayerMismatch { expected: usize, found: usize },
    #[error("invalid severity weight input: {0}")]
    BadWeights(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailLayer {
    pub side: Side,
    /// 1-based depth from the bulk.
    pub depth: usize,
    pub lo: f64,
    pub hi: f64,
    pub pi: f64,
}

impl TailLayer {
    pub fn label(&self) -> String {
        let sign = match self.side {
            Side::Left => '-',
            Side::Right => '+',
        };
        format!("Lv{}{sign}", self.depth)
    }
}

/// Left layers deepest first, then right layers from the bulk outward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSystem {
    left: Vec<UniformLayer>,
    right: Vec<UniformLayer>,
}

impl LayerSystem {
    /// Both slices are ordered from the bulk outward.
    pub fn new(left: &[UniformLayer], right: &[UniformLayer]) -> Self {
        Self { left: left.to_vec(), right: right.to_vec() }
    }

    pub fn from_model(model: &SeverityModel) -> Self {
        Self::new(&model.left_layers, &model.right_layers)
    }

    pub fn len(&self) -> usize {
        self.left.len() + self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layers(&self) -> Vec<TailLayer> {
        let m = self.left.len();
        let left = self.left.iter().enumerate().rev().map(|(i, l)| TailLayer {
            side: Side::Left,
            depth: i + 1,
            lo: l.lo,
            hi: l.hi,
            pi: l.pi,
        });
        let right = self.right.iter().enumerate().map(|(i, l)| TailLayer {
            side: Side::Right,
            depth: i + 1,
            lo: l.lo,
            hi: l.hi,
            pi: l.pi,
        });
        let out: Vec<TailLayer> = left.chain(right).collect();
        debug_assert_eq!(out.len(), m + self.right.len());
        out
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.layers().iter().map(|l| l.pi).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.layers().iter().map(TailLayer::label).collect()
    }

    /// Combined index of the layer owning `x`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        match locate_layer(&self.left, &self.right, x)? {
            (Side::Left, i) => Some(self.left.len() - 1 - i),
            (Side::Right, i) => Some(self.left.len() + i),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MltcProfile {
    pub driver_id: String,
    pub trip_id: String,
    /// Number of retained coefficients.
    pub exposure: u64,
    pub counts: Vec<u64>,
}

/// Counts retained coefficients falling in each layer.
pub fn mltc(
    driver_id: &str,
    trip_id: &str,
    values: &[f64],
    retained: &[usize],
    layers: &LayerSystem,
) -> Result<MltcProfile, RiskError> {
    let mut counts = vec![0u64; layers.len()];
    for &t in retained {
        let x = *values.get(t).ok_or(RiskError::IndexOutOfRange { index: t, len: values.len() })?;
        if let Some(m) = layers.locate(x) {
            counts[m] += 1;
        }
    }
    Ok(MltcProfile { driver_id: driver_id.into(), trip_id: trip_id.into(), exposure: retained.len() as u64, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub omega: f64,
    /// Layers where the winsorized rates had no spread.
    pub fallback_used: Vec<bool>,
}

impl GammaPrior {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Clips a sample to its order statistics x_(k+1) and x_(n-k), k = floor(omega n).
pub fn winsorize(values: &[f64], omega: f64) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((omega * n as f64).floor() as usize).min((n - 1) / 2);
    let (lo, hi) = (sorted[k], sorted[n - 1 - k]);
    values.iter().map(|v| v.clamp(lo, hi)).collect()
}

/// Winsorized moment-matching Gamma prior per layer.
pub fn eb_priors(profiles: &[MltcProfile], omega: f64) -> Result<GammaPrior, RiskError> {
    if !(0.0..0.5).contains(&omega) {
        return Err(RiskError::BadOmega(omega));
    }
    let usable: Vec<&MltcProfile> = profiles.iter().filter(|p| p.exposure > 0).collect();
    if usable.len() < 2 {
        return Err(RiskError::TooFewProfiles(usable.len()));
    }
    let m = usable[0].counts.len();
    if let Some(p) = usable.iter().find(|p| p.counts.len() != m) {
        return Err(RiskError::LayerMismatch { expected: m, found: p.counts.len() });
    }
    let mut prior = GammaPrior { alpha: Vec::new(), beta: Vec::new(), omega, fallback_used: Vec::new() };
    for layer in 0..m {
        let rates: Vec<f64> = usable.iter().map(|p| p.counts[layer] as f64 / p.exposure as f64).collect();
        let w = winsorize(&rates, omega);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        if var <= 1e-12 * mean * mean || var <= 0.0 {
            prior.alpha.push(1.0);
            prior.beta.push(1.0 / mean.max(1e-12));
            prior.fallback_used.push(true);
        } else {
            prior.alpha.push(mean * mean / var);
            prior.beta.push(mean / var);
            prior.fallback_used.push(false);
        }
    }
    Ok(prior)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityWeights {
    pub gamma: f64,
    pub weights: Vec<f64>,
}

/// w_m proportional to pi_m^(-gamma), normalized in log space.
pub fn severity_weights(pis: &[f64], gamma: f64) -> Result<SeverityWeights, RiskError> {
    if pis.is_empty() || pis.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(RiskError::BadWeights("probabilities must lie in (0, 1)".into()));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(RiskError::BadWeights(format!("gamma {gamma} must be a finite nonnegative number")));
    }
    let logs: Vec<f64> = pis.iter().map(|p| -gamma * p.ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(SeverityWeights { gamma, weights: raw.iter().map(|r| r / total).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripScore {
    pub index: f64,
    pub contributions: Vec<f64>,
}

/// Severity-weighted sum of layer posterior means for one trip.
pub fn trip_index(
    profile: &MltcProfile,
    prior: &GammaPrior,
    weights: &SeverityWeights,
) -> Result<TripScore, RiskError> {
    let m = prior.len();
    for found in [profile.counts.len(), weights.weights.len()] {
        if found != m {
            return Err(RiskError::LayerMismatch { expected: m, found });
        }
    }
    let e = profile.exposure as f64;
    let contributions: Vec<f64> = (0..m)
        .map(|k| weights.weights[k] * (prior.alpha[k] + profile.counts[k] as f64) / (prior.beta[k] + e))
        .collect();
    Ok(TripScore { index: contributions.iter().sum(), contributions })
}

/// Gamma posterior of one driver's layer intensities. The state keeps the
/// running integer sums, so trip-by-trip and batched updates agree exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverPosterior {
    pub driver_id: String,
    pub prior_alpha: Vec<f64>,
    pub prior_beta: Vec<f64>,
    pub sum_counts: Vec<u64>,
    pub sum_exposure: u64,
    pub trips: usize,
}

impl DriverPosterior {
    pub fn new(driver_id: &str, prior: &GammaPrior) -> Self {
        Self {
            driver_id: driver_id.into(),
            prior_alpha: prior.alpha.clone(),
            prior_beta: prior.beta.clone(),
            sum_counts: vec![0; prior.len()],
            sum_exposure: 0,
            trips: 0,
        }
    }

    pub fn alpha(&self, m: usize) -> f64 {
        self.prior_alpha[m] + self.sum_counts[m] as f64
    }

    pub fn beta(&self, m: usize) -> f64 {
        self.prior_beta[m] + self.sum_exposure as f64
    }

    pub fn posterior_mean(&self, m: usize) -> f64 {
        self.alpha(m) / self.beta(m)
    }

    pub fn update(&mut self, profile: &MltcProfile) -> Result<(), RiskError> {
        if profile.driver_id != self.driver_id {
            return Err(RiskError::DriverMismatch {
                expected: self.driver_id.clone(),
                found: profile.driver_id.clone(),
            });
        }
        if profile.counts.len() != self.sum_counts.len() {
            return Err(RiskError::LayerMismatch { expected: self.sum_counts.len(), found: profile.counts.len() });
        }
        for (s, c) in self.sum_counts.iter_mut().zip(&profile.counts) {
            *s += c;
        }
        self.sum_exposure += profile.exposure;
        self.trips += 1;
        Ok(())
    }

    pub fn index(&self, weights: &SeverityWeights) -> Result<f64, RiskError> {
        if self.trips == 0 {
            return Err(RiskError::NoTripsYet(self.driver_id.clone()));
        }
        if weights.weights.len() != self.sum_counts.len() {
            return Err(RiskError::LayerMismatch { expected: self.sum_counts.len(), found: weights.weights.len() });
        }
        Ok((0..self.sum_counts.len()).map(|m| weights.weights[m] * self.posterior_mean(m)).sum())
    }
}

/// Credibility form of a single Gamma-Poisson update: returns
/// (past weight, new-data weight) so that the posterior mean equals
/// `past * alpha / beta + new * n / e`.
pub fn credibility_weights(beta: f64, exposure: f64) -> (f64, f64) {
    (beta / (beta + exposure), exposure / (beta + exposure))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_layers() -> LayerSystem {
        let l = |lo, hi, pi| UniformLayer { lo, hi, pi };
        LayerSystem::new(
            &[
                l(-0.0549, -0.0405, 0.01591),
                l(-0.0693, -0.0549, 0.00547),
                l(-0.1127, -0.0693, 0.00322),
                l(-0.2136, -0.1127, 0.00071),
            ],
            &[
                l(0.0403, 0.0506, 0.01142),
                l(0.0506, 0.0609, 0.00516),
                l(0.0609, 0.0713, 0.00246),
                l(0.0713, 0.0919, 0.00183),
                l(0.0919, 0.1430, 0.00092),
            ],
        )
    }

    fn profile(n: &[u64], e: u64) -> MltcProfile {
        MltcProfile { driver_id: "D1".into(), trip_id: "t".into(), exposure: e, counts: n.to_vec() }
    }

    #[test]
    fn labels_and_order() {
        let s = table_layers();
        assert_eq!(s.labels(), vec!["Lv4-", "Lv3-", "Lv2-", "Lv1-", "Lv1+", "Lv2+", "Lv3+", "Lv4+", "Lv5+"]);
        assert_eq!(s.probabilities()[0], 0.00071);
    }

    #[test]
    fn table_intervals_count() {
        let s = table_layers();
        let values = [-0.08, -0.06, 0.095, 0.0, 0.01];
        let p = mltc("D1", "t", &values, &[0, 1, 2, 3, 4], &s).unwrap();
        assert_eq!(p.counts, vec![0, 1, 1, 0, 0, 0, 0, 0, 1]);
        assert_eq!(p.exposure, 5);
        let bulk = mltc("D1", "t", &values, &[3, 4], &s).unwrap();
        assert!(bulk.counts.iter().all(|c| *c == 0));
        assert!(mltc("D1", "t", &values, &[9], &s).is_err());
    }

    #[test]
    fn winsorized_prior_example() {
        let rates = [1u64, 2, 3, 4, 100];
        let profiles: Vec<MltcProfile> = rates.iter().map(|r| profile(&[*r], 1000)).collect();
        let prior = eb_priors(&profiles, 0.2).unwrap();
        assert!((prior.alpha[0] - 11.25).abs() < 1e-9);
        assert!((prior.beta[0] - 3750.0).abs() < 1e-6);
        assert!(!prior.fallback_used[0]);
    }

    #[test]
    fn flat_rates_fall_back() {
        let profiles = vec![profile(&[3, 0], 1000), profile(&[6, 0], 2000), profile(&[3, 0], 1000)];
        let prior = eb_priors(&profiles, 0.05).unwrap();
        assert_eq!(prior.alpha[0], 1.0);
        assert!((prior.beta[0] - 1000.0 / 3.0).abs() < 1e-9);
        assert_eq!((prior.alpha[1], prior.beta[1]), (1.0, 1e12));
        assert_eq!(prior.fallback_used, vec![true, true]);
    }

    #[test]
    fn omega_zero_is_plain_moments() {
        let profiles = vec![profile(&[1], 100), profile(&[3], 100)];
        let prior = eb_priors(&profiles, 0.0).unwrap();
        // mean 0.02, population variance 1e-4
        assert!((prior.alpha[0] - 4.0).abs() < 1e-9);
        assert!((prior.beta[0] - 200.0).abs() < 1e-7);
        assert_eq!(eb_priors(&profiles[..1], 0.0), Err(RiskError::TooFewProfiles(1)));
    }

    #[test]
    fn weights_examples() {
        let w = severity_weights(&[0.3, 0.2, 0.1], 0.0).unwrap();
        assert!(w.weights.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = severity_weights(&[0.01, 0.04], 1.0).unwrap();
        assert!((w.weights[0] - 0.8).abs() < 1e-15 && (w.weights[1] - 0.2).abs() < 1e-15);
        assert!(severity_weights(&[0.0, 0.5], 1.0).is_err());
    }

    #[test]
    fn single_layer_trip_index() {
        let prior = GammaPrior { alpha: vec![1.0], beta: vec![1000.0], omega: 0.05, fallback_used: vec![false] };
        let w = SeverityWeights { gamma: 1.0, weights: vec![1.0] };
        let s = trip_index(&profile(&[4], 1000), &prior, &w).unwrap();
        assert!((s.index - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn driver_sequence() {
        let prior = GammaPrior { alpha: vec![2.0], beta: vec![1000.0], omega: 0.05, fallback_used: vec![false] };
        let w = SeverityWeights { gamma: 1.0, weights: vec![1.0] };
        let mut d = DriverPosterior::new("D1", &prior);
        assert_eq!(d.index(&w), Err(RiskError::NoTripsYet("D1".into())));
        let trip = profile(&[3], 1000);
        d.update(&trip).unwrap();
        assert!((d.posterior_mean(0) - 0.0025).abs() < 1e-18);
        let (past, new) = credibility_weights(1000.0, 1000.0);
        assert!((past * 0.002 + new * 0.003 - 0.0025).abs() < 1e-15);
        assert_eq!(d.index(&w).unwrap(), trip_index(&trip, &prior, &w).unwrap().index);
        let before = d.clone();
        d.update(&profile(&[0], 0)).unwrap();
        assert_eq!(d.trips, 2);
        assert_eq!(d.posterior_mean(0), before.posterior_mean(0));
        let mut other = profile(&[1], 10);
        other.driver_id = "D2".into();
        assert!(matches!(d.update(&other), Err(RiskError::DriverMismatch { .. })));
    }
}
