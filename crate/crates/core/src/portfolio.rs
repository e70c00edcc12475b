//! Pooled portfolio sample: ACF-based within-trip thinning plus driver/trip
//! sampling.

use crate::seeds;
use crate::wavelet::AggregatedSeries;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("series has zero variance")]
    ZeroVarianceSignal,
    #[error("series of length {len} is too short for an ACF scan")]
    SeriesTooShort { len: usize },
    #[error("no trips to pool")]
    EmptyCohort,
    #[error("invalid thinning setting: {0}")]
    BadConfig(String),
}

/// Biased sample ACF at lags 1..=max_lag.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>, PortfolioError> {
    let n = series.len();
    if max_lag == 0 || n <= max_lag {
        return Err(PortfolioError::SeriesTooShort { len: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    let scale = series.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if c0 <= 1e-14 * scale {
        return Err(PortfolioError::ZeroVarianceSignal);
    }
    Ok((1..=max_lag)
        .map(|k| centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThinningConfig {
    pub threshold: f64,
    pub run: usize,
    pub max_lag: usize,
    /// Skips the ACF rule and uses this lag for every trip.
    pub forced_lag: Option<usize>,
}

impl Default for ThinningConfig {
    fn default() -> Self {
        Self { threshold: 0.1, run: 3, max_lag: 400, forced_lag: None }
    }
}

impl ThinningConfig {
    pub fn validate(&self) -> Result<(), PortfolioError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PortfolioError::BadConfig("threshold must lie in (0, 1)".into()));
        }
        if self.run == 0 || self.max_lag == 0 {
            return Err(PortfolioError::BadConfig("run and max_lag must be at least 1".into()));
        }
        if self.forced_lag == Some(0) {
            return Err(PortfolioError::BadConfig("forced lag must be at least 1".into()));
        }
        Ok(())
    }
}

/// Smallest lag whose ACF and the next `run - 1` lags are all below
/// `threshold` in absolute value, given acf values at lags 1, 2, ...
/// `None` when no such lag exists.
pub fn first_decorrelated_lag(acf: &[f64], threshold: f64, run: usize) -> Option<usize> {
    if acf.len() < run {
        return None;
    }
    (0..=acf.len() - run).find(|&i| acf[i..i + run].iter().all(|a| a.abs() < threshold)).map(|i| i + 1)
}

/// Thinning lag and the ACF values it was read from.
pub fn thinning_lag(series: &[f64], cfg: &ThinningConfig) -> Result<(usize, Vec<f64>), PortfolioError> {
    let n = series.len();
    if n < 3 {
        return Err(PortfolioError::SeriesTooShort { len: n });
    }
    let acf = autocorrelation(series, cfg.max_lag.min(n - 2))?;
    let lag = match first_decorrelated_lag(&acf, cfg.threshold, cfg.run) {
        Some(lag) => lag,
        None => {
            let cap = (n / 10).max(1);
            log::warn!("ACF never fell below {} for {} lags; using lag {cap}", cfg.threshold, cfg.run);
            cap
        }
    };
    Ok((lag, acf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningReport {
    pub trip_id: String,
    pub chosen_lag: usize,
    pub start_offset: usize,
    pub retained_indices: Vec<usize>,
    pub acf_values: Vec<f64>,
}

impl ThinningReport {
    /// Exposure: number of retained indices.
    pub fn exposure(&self) -> usize {
        self.retained_indices.len()
    }
}

/// Keeps every `lag`-th index from a uniform random start in `0..lag`.
pub fn thin_trip<R: Rng>(series: &AggregatedSeries, lag: usize, rng: &mut R) -> ThinningReport {
    assert!(lag >= 1, "lag must be positive");
    let start = rng.random_range(0..lag);
    ThinningReport {
        trip_id: series.trip_id.clone(),
        chosen_lag: lag,
        start_offset: start,
        retained_indices: (start..series.values.len()).step_by(lag).collect(),
        acf_values: Vec::new(),
    }
}

/// Aggregated coefficients of one trip, tagged with its driver.
#[derive(Debug, Clone, PartialEq)]
pub struct TripSeries {
    pub driver_id: String,
    pub series: AggregatedSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PortfolioMode {
    #[default]
    AllTrips,
    /// Draws a driver then one of their trips, uniformly, `draws` times.
    Hierarchical { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioPoint {
    pub driver_id: String,
    pub trip_id: String,
    pub t_index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSample {
    pub points: Vec<PortfolioPoint>,
    pub reports: BTreeMap<String, ThinningReport>,
}

impl PortfolioSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }
}

/// Thins one trip using a stream derived from `seed` and the trip id.
pub fn thin_with_seed(
    series: &AggregatedSeries,
    cfg: &ThinningConfig,
    seed: u64,
) -> Result<ThinningReport, PortfolioError> {
    let (lag, acf) = match cfg.forced_lag {
        Some(lag) => (lag, Vec::new()),
        None => thinning_lag(&series.values, cfg)?,
    };
    let mut rng = seeds::rng_for(seed, &format!("thin/{}", series.trip_id));
    let mut report = thin_trip(series, lag, &mut rng);
    report.acf_values = acf;
    Ok(report)
}

pub fn build_portfolio(
    trips: &[TripSeries],
    mode: PortfolioMode,
    cfg: &ThinningConfig,
    seed: u64,
) -> Result<PortfolioSample, PortfolioError> {
    cfg.validate()?;
    if trips.is_empty() {
        return Err(PortfolioError::EmptyCohort);
    }
    let chosen: Vec<&TripSeries> = match mode {
        PortfolioMode::AllTrips => trips.iter().collect(),
        PortfolioMode::Hierarchical { draws } => {
            let mut by_driver: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, t) in trips.iter().enumerate() {
                by_driver.entry(&t.driver_id).or_default().push(i);
            }
            let drivers: Vec<&Vec<usize>> = by_driver.values().collect();
            let mut rng = seeds::rng_for(seed, "portfolio/hierarchical");
            let mut picked = vec![false; trips.len()];
            for _ in 0..draws {
                let pool = drivers[rng.random_range(0..drivers.len())];
                picked[pool[rng.random_range(0..pool.len())]] = true;
            }
            trips.iter().zip(picked).filter(|(_, p)| *p).map(|(t, _)| t).collect()
        }
    };
    if chosen.is_empty() {
        return Err(PortfolioError::EmptyCohort);
    }
    let mut chosen = chosen;
    chosen.sort_by(|a, b| (&a.driver_id, &a.series.trip_id).cmp(&(&b.driver_id, &b.series.trip_id)));
    let reports: Vec<ThinningReport> =
        chosen.par_iter().map(|t| thin_with_seed(&t.series, cfg, seed)).collect::<Result<_, _>>()?;

    let mut points = Vec::new();
    for (trip, report) in chosen.iter().zip(&reports) {
        points.extend(report.retained_indices.iter().map(|&t| PortfolioPoint {
            driver_id: trip.driver_id.clone(),
            trip_id: trip.series.trip_id.clone(),
            t_index: t,
            value: trip.series.values[t],
        }));
    }
    Ok(PortfolioSample { points, reports: reports.into_iter().map(|r| (r.trip_id.clone(), r)).collect() })
}
