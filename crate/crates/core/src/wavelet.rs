//! Maximal overlap discrete wavelet transform (MODWT) with Daubechies D4
//! filters, its inverse, variance diagnostics and across-level aggregation.
//!
//! The forward transform uses the pyramid recursion: starting from
//! `V_0 = X`, stage `j` filters `V_{j-1}` circularly with the base filters
//! scaled by `1/sqrt(2)` and dilated by `2^(j-1)`. Each stage is an
//! orthogonal split, so `|V_{j-1}|^2 = |W_j|^2 + |V_j|^2` holds to rounding.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveletError {
    #[error("series of length {len} is shorter than the level-{levels} filter width {width}")]
    SeriesTooShort { len: usize, levels: usize, width: usize },
    #[error("at least one decomposition level is required")]
    NoLevels,
    #[error("signal has zero sample variance")]
    ZeroVarianceSignal,
    #[error("level set is empty")]
    EmptyLevelSet,
    #[error("level {level} outside 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("bad aggregation weights: {0}")]
    BadWeights(String),
}

/// Wavelet and scaling filter taps of one filter family.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub wavelet: Vec<f64>,
    pub scaling: Vec<f64>,
}

impl FilterPair {
    pub fn width(&self) -> usize {
        self.wavelet.len()
    }

    /// Builds the scaling filter through the quadrature-mirror relation
    /// `g_l = (-1)^(l+1) h_(L-1-l)`.
    fn from_wavelet(wavelet: Vec<f64>) -> Self {
        let len = wavelet.len();
        let scaling = (0..len)
            .map(|l| {
                let sign = if l % 2 == 0 { -1.0 } else { 1.0 };
                sign * wavelet[len - 1 - l]
            })
            .collect();
        Self { wavelet, scaling }
    }
}

/// Daubechies D4 filters (`L = 4`).
pub fn d4_filters() -> FilterPair {
    let s3 = 3f64.sqrt();
    let denom = 4.0 * SQRT_2;
    FilterPair::from_wavelet(vec![(1.0 - s3) / denom, (-3.0 + s3) / denom, (3.0 + s3) / denom, (-1.0 - s3) / denom])
}

/// Haar filters, kept for comparison runs.
pub fn haar_filters() -> FilterPair {
    FilterPair::from_wavelet(vec![1.0 / SQRT_2, -1.0 / SQRT_2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WaveletFamily {
    #[default]
    D4,
    Haar,
}

impl WaveletFamily {
    pub fn filters(self) -> FilterPair {
        match self {
            WaveletFamily::D4 => d4_filters(),
            WaveletFamily::Haar => haar_filters(),
        }
    }
}

/// Equivalent filter width at level `j`: `(2^j - 1)(L - 1) + 1`.
pub fn filter_width(filter_len: usize, level: usize) -> usize {
    ((1usize << level) - 1) * (filter_len - 1) + 1
}

/// `floor(log2 T)`, the conventional full decomposition depth.
pub fn full_depth(len: usize) -> usize {
    if len < 2 {
        0
    } else {
        (usize::BITS - 1 - len.leading_zeros()) as usize
    }
}

/// Per-level MODWT wavelet vectors plus the final scaling vector of one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    pub trip_id: String,
    pub family: WaveletFamily,
    /// `wavelet_coeffs[j - 1]` holds level `j`.
    pub wavelet_coeffs: Vec<Vec<f64>>,
    pub scaling_coeffs: Vec<f64>,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.wavelet_coeffs.len()
    }

    pub fn len(&self) -> usize {
        self.scaling_coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaling_coeffs.is_empty()
    }

    /// Level `j` (1-based) wavelet coefficients.
    pub fn level(&self, j: usize) -> &[f64] {
        &self.wavelet_coeffs[j - 1]
    }
}

pub fn modwt_forward(samples: &[f64], levels: usize) -> Result<WaveletDecomposition, WaveletError> {
    modwt_forward_with(samples, levels, WaveletFamily::D4)
}

pub fn modwt_forward_with(
    samples: &[f64],
    levels: usize,
    family: WaveletFamily,
) -> Result<WaveletDecomposition, WaveletError> {
    if levels == 0 {
        return Err(WaveletError::NoLevels);
    }
    let filters = family.filters();
    let len = samples.len();
    let width = filter_width(filters.width(), levels);
    if len < width {
        return Err(WaveletError::SeriesTooShort { len, levels, width });
    }
    let h: Vec<f64> = filters.wavelet.iter().map(|v| v / SQRT_2).collect();
    let g: Vec<f64> = filters.scaling.iter().map(|v| v / SQRT_2).collect();

    let mut wavelet_coeffs = Vec::with_capacity(levels);
    let mut smooth = samples.to_vec();
    for j in 1..=levels {
        let step = (1usize << (j - 1)) % len;
        let mut w = vec![0.0; len];
        let mut v = vec![0.0; len];
        for t in 0..len {
            let mut acc_w = 0.0;
            let mut acc_v = 0.0;
            let mut idx = t;
            for (hl, gl) in h.iter().zip(&g) {
                let x = smooth[idx];
                acc_w += hl * x;
                acc_v += gl * x;
                idx = if idx >= step { idx - step } else { idx + len - step };
            }
            w[t] = acc_w;
            v[t] = acc_v;
        }
        wavelet_coeffs.push(w);
        smooth = v;
    }
    Ok(WaveletDecomposition { trip_id: String::new(), family, wavelet_coeffs, scaling_coeffs: smooth })
}

/// Inverts the pyramid stage by stage.
pub fn modwt_inverse(decomp: &WaveletDecomposition) -> Vec<f64> {
    let filters = decomp.family.filters();
    let h: Vec<f64> = filters.wavelet.iter().map(|v| v / SQRT_2).collect();
    let g: Vec<f64> = filters.scaling.iter().map(|v| v / SQRT_2).collect();
    let len = decomp.len();
    if len == 0 {
        return Vec::new();
    }
    let mut smooth = decomp.scaling_coeffs.clone();
    for j in (1..=decomp.levels()).rev() {
        let step = (1usize << (j - 1)) % len;
        let w = decomp.level(j);
        let mut prev = vec![0.0; len];
        for (t, out) in prev.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut idx = t;
            for (hl, gl) in h.iter().zip(&g) {
                acc += hl * w[idx] + gl * smooth[idx];
                idx += step;
                if idx >= len {
                    idx -= len;
                }
            }
            *out = acc;
        }
        smooth = prev;
    }
    smooth
}

fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// Share of the sample variance carried by each wavelet level,
/// `rho_j = (|W_j|^2 / T) / sigma_X^2`.
pub fn variance_contributions(samples: &[f64], decomp: &WaveletDecomposition) -> Result<Vec<f64>, WaveletError> {
    let len = samples.len() as f64;
    let mean_sq = sum_sq(samples) / len;
    let mean = samples.iter().sum::<f64>() / len;
    let variance = mean_sq - mean * mean;
    if !(variance > 1e-14 * mean_sq.max(f64::MIN_POSITIVE)) {
        return Err(WaveletError::ZeroVarianceSignal);
    }
    Ok(decomp.wavelet_coeffs.iter().map(|w| (sum_sq(w) / len) / variance).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSelection {
    pub levels: usize,
    pub contributions: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// True when no drop below the threshold was found before the cap.
    pub capped: bool,
}

/// Smallest `j` with `rho_(j+1) < drop_threshold * rho_j`, capped at
/// `max_level` (normally [`full_depth`] of the trip).
pub fn select_depth(contributions: &[f64], drop_threshold: f64, max_level: usize) -> DepthSelection {
    let cap = max_level.max(1);
    let found = contributions.windows(2).position(|pair| pair[1] < drop_threshold * pair[0]).map(|i| i + 1);
    let cumulative = contributions
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect();
    let (levels, capped) = match found {
        Some(j) if j <= cap => (j, false),
        _ => (cap, true),
    };
    DepthSelection { levels, contributions: contributions.to_vec(), cumulative, capped }
}

/// Pointwise rule combining the wavelet coefficients of several levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// Coefficient of largest magnitude, sign kept; lowest level wins ties.
    #[default]
    SignedMaxAbs,
    MaxAbs,
    AverageAbs,
    /// Weights aligned with the level set, nonnegative and summing to 1.
    WeightedAbs(Vec<f64>),
    SingleLevel(usize),
}

impl AggregationRule {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationRule::SignedMaxAbs => "signed_max_abs",
            AggregationRule::MaxAbs => "max_abs",
            AggregationRule::AverageAbs => "average_abs",
            AggregationRule::WeightedAbs(_) => "weighted_abs",
            AggregationRule::SingleLevel(_) => "single_level",
        }
    }
}

/// Single aggregated coefficient series `C_t` of one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedSeries {
    pub trip_id: String,
    pub values: Vec<f64>,
    pub rule: AggregationRule,
    pub levels_used: Vec<usize>,
}

impl AggregatedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Aggregates the levels in `levels` (1-based, sorted and deduplicated
/// internally). An empty slice means "all levels".
pub fn aggregate(
    decomp: &WaveletDecomposition,
    rule: &AggregationRule,
    levels: &[usize],
) -> Result<AggregatedSeries, WaveletError> {
    let max = decomp.levels();
    let mut set: Vec<usize> = if levels.is_empty() { (1..=max).collect() } else { levels.to_vec() };
    if let AggregationRule::WeightedAbs(weights) = rule {
        // weights follow the caller's level order; keep pairs together
        if weights.len() != set.len() {
            return Err(WaveletError::BadWeights(format!("{} weights for {} levels", weights.len(), set.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(WaveletError::BadWeights("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(WaveletError::BadWeights(format!("weights sum to {total}, not 1")));
        }
    } else {
        set.sort_unstable();
        set.dedup();
    }
    if set.is_empty() {
        return Err(WaveletError::EmptyLevelSet);
    }
    if let Some(&bad) = set.iter().find(|&&j| j == 0 || j > max) {
        return Err(WaveletError::LevelOutOfRange { level: bad, max });
    }
    let len = decomp.len();
    let values = match rule {
        AggregationRule::SignedMaxAbs => (0..len)
            .map(|t| {
                let mut best = decomp.level(set[0])[t];
                for &j in &set[1..] {
                    let v = decomp.level(j)[t];
                    if v.abs() > best.abs() {
                        best = v;
                    }
                }
                best
            })
            .collect(),
        AggregationRule::MaxAbs => {
            (0..len).map(|t| set.iter().map(|&j| decomp.level(j)[t].abs()).fold(0.0, f64::max)).collect()
        }
        AggregationRule::AverageAbs => {
            let k = set.len() as f64;
            (0..len).map(|t| set.iter().map(|&j| decomp.level(j)[t].abs()).sum::<f64>() / k).collect()
        }
        AggregationRule::WeightedAbs(weights) => {
            (0..len).map(|t| set.iter().zip(weights).map(|(&j, w)| w * decomp.level(j)[t].abs()).sum()).collect()
        }
        AggregationRule::SingleLevel(j) => {
            if !set.contains(j) {
                return Err(WaveletError::LevelOutOfRange { level: *j, max });
            }
            decomp.level(*j).to_vec()
        }
    };
    Ok(AggregatedSeries { trip_id: decomp.trip_id.clone(), values, rule: rule.clone(), levels_used: set })
}
