//! Trip data model, UAH-DriveSet loading, the CSV interchange format and the
//! synthetic cohort generator.

use crate::seeds;
use crate::wavelet::{self, AggregationRule, WaveletError};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no trip files found under {0}")]
    EmptyDataset(PathBuf),
    #[error("{path}: row {line} has no column {column}")]
    MissingColumn { path: PathBuf, line: usize, column: usize },
    #[error("{path}: unparsable row {line}")]
    UnparsableRow { path: PathBuf, line: usize },
    #[error("{path}: timestamp goes backwards at row {line}")]
    NonMonotoneTimestamp { path: PathBuf, line: usize },
    #[error("{0}: trip has no samples")]
    EmptyTrip(String),
    #[error("trip {trip_id} has {len} samples, need at least {min}")]
    TripTooShort { trip_id: String, len: usize, min: usize },
    #[error("cannot infer {what} from {name}")]
    BadTripName { name: String, what: &'static str },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown road type {0:?}")]
    UnknownRoad(String),
    #[error("interchange CSV: {0}")]
    Interchange(String),
    #[error("infeasible cohort spec: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Behavioral class of a trip. Raw labels such as `normal1` collapse here;
/// the raw text stays on the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Aggressive,
    Drowsy,
}

impl Label {
    pub fn from_raw(raw: &str) -> Result<Self, IngestError> {
        let lower = raw.to_ascii_lowercase();
        if lower.starts_with("normal") {
            Ok(Label::Normal)
        } else if lower.starts_with("aggressive") {
            Ok(Label::Aggressive)
        } else if lower.starts_with("drowsy") {
            Ok(Label::Drowsy)
        } else {
            Err(IngestError::UnknownLabel(raw.to_string()))
        }
    }

    pub fn is_risky(self) -> bool {
        self != Label::Normal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Aggressive => "aggressive",
            Label::Drowsy => "drowsy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    Secondary,
    Motorway,
    Synthetic,
}

impl RoadType {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadType::Secondary => "secondary",
            RoadType::Motorway => "motorway",
            RoadType::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for RoadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoadType {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "secondary" => Ok(RoadType::Secondary),
            "motorway" => Ok(RoadType::Motorway),
            "synthetic" => Ok(RoadType::Synthetic),
            _ => Err(IngestError::UnknownRoad(s.to_string())),
        }
    }
}

/// One trip's longitudinal acceleration series (G units) with metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub driver_id: String,
    pub trip_id: String,
    pub label: Label,
    /// Label as written in the source, e.g. `normal2`.
    pub label_raw: String,
    pub road_type: RoadType,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

impl TripRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Minimum accepted trip length for a `levels`-deep D4 decomposition.
pub fn min_trip_len(levels: usize) -> usize {
    2 * wavelet::filter_width(4, levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UahOptions {
    /// Sensor file name looked up in every trip directory.
    pub file_name: String,
    /// 1-based column of the timestamp (seconds).
    pub time_column: usize,
    /// 1-based column of the longitudinal acceleration.
    pub accel_column: usize,
    pub sample_rate_hz: f64,
    /// Trips shorter than this are rejected.
    pub min_len: usize,
}

impl Default for UahOptions {
    fn default() -> Self {
        Self {
            file_name: "RAW_ACCELEROMETERS.txt".into(),
            time_column: 1,
            accel_column: 5,
            sample_rate_hz: 10.0,
            min_len: min_trip_len(6),
        }
    }
}

fn find_files(root: &Path, name: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(root)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            find_files(&path, name, out)?;
        } else if entry.file_name() == name {
            out.push(path);
        }
    }
    Ok(())
}

/// Parses driver, label and road from a UAH trip directory name such as
/// `20151110175712-16km-D1-NORMAL1-SECONDARY`.
pub fn parse_trip_dir_name(name: &str) -> Result<(String, String, RoadType), IngestError> {
    let tokens: Vec<&str> = name.split(['-', '_']).collect();
    let driver = tokens
        .iter()
        .find(|t| t.len() >= 2 && t.starts_with(['D', 'd']) && t[1..].chars().all(|c| c.is_ascii_digit()))
        .map(|t| t.to_ascii_uppercase())
        .ok_or_else(|| IngestError::BadTripName { name: name.into(), what: "driver" })?;
    let label = tokens
        .iter()
        .find(|t| Label::from_raw(t).is_ok())
        .map(|t| t.to_ascii_lowercase())
        .ok_or_else(|| IngestError::BadTripName { name: name.into(), what: "label" })?;
    let road = tokens
        .iter()
        .find_map(|t| t.parse::<RoadType>().ok())
        .ok_or_else(|| IngestError::BadTripName { name: name.into(), what: "road type" })?;
    Ok((driver, label, road))
}

/// Reads one whitespace-separated sensor file.
pub fn read_sensor_file(path: &Path, opts: &UahOptions) -> Result<Vec<f64>, IngestError> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    let needed = opts.time_column.max(opts.accel_column);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < needed {
            return Err(IngestError::MissingColumn { path: path.into(), line, column: cols.len() + 1 });
        }
        let parse = |col: usize| -> Result<f64, IngestError> {
            cols[col - 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::UnparsableRow { path: path.into(), line })
        };
        let time = parse(opts.time_column)?;
        let accel = parse(opts.accel_column)?;
        if time < last_time {
            return Err(IngestError::NonMonotoneTimestamp { path: path.into(), line });
        }
        last_time = time;
        samples.push(accel);
    }
    Ok(samples)
}

/// Loads every trip under `root`. Trips come back sorted by driver then
/// trip id.
pub fn load_uah_dataset(root: &Path, opts: &UahOptions) -> Result<Vec<TripRecord>, IngestError> {
    let mut files = Vec::new();
    find_files(root, &opts.file_name, &mut files)?;
    if files.is_empty() {
        return Err(IngestError::EmptyDataset(root.into()));
    }
    let mut trips = Vec::with_capacity(files.len());
    for file in files {
        let dir_name =
            file.parent().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let (driver_id, label_raw, road_type) = parse_trip_dir_name(&dir_name)?;
        let samples = read_sensor_file(&file, opts)?;
        if samples.is_empty() {
            return Err(IngestError::EmptyTrip(dir_name));
        }
        if samples.len() < opts.min_len {
            return Err(IngestError::TripTooShort { trip_id: dir_name, len: samples.len(), min: opts.min_len });
        }
        trips.push(TripRecord {
            driver_id,
            trip_id: dir_name,
            label: Label::from_raw(&label_raw)?,
            label_raw,
            road_type,
            sample_rate_hz: opts.sample_rate_hz,
            samples,
        });
    }
    trips.sort_by(|a, b| (&a.driver_id, &a.trip_id).cmp(&(&b.driver_id, &b.trip_id)));
    Ok(trips)
}

pub const INTERCHANGE_HEADER: [&str; 7] =
    ["driver_id", "trip_id", "label", "road_type", "sample_rate_hz", "t_index", "accel_g"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes trips in the interchange layout, one row per sample.
pub fn write_trips_csv<W: Write>(writer: W, trips: &[TripRecord]) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(INTERCHANGE_HEADER)?;
    for trip in trips {
        let rate = fmt_f64(trip.sample_rate_hz);
        for (t, x) in trip.samples.iter().enumerate() {
            w.write_record([
                trip.driver_id.as_str(),
                trip.trip_id.as_str(),
                trip.label_raw.as_str(),
                trip.road_type.as_str(),
                rate.as_str(),
                &t.to_string(),
                &fmt_f64(*x),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the interchange layout. Lines starting with `#` are skipped.
pub fn read_trips_csv<R: Read>(reader: R) -> Result<Vec<TripRecord>, IngestError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != INTERCHANGE_HEADER {
        return Err(IngestError::Interchange(format!("unexpected header {headers:?}")));
    }
    let mut trips: Vec<TripRecord> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let bad = || IngestError::Interchange(format!("bad value on data row {line}"));
        let key = (record[0].to_string(), record[1].to_string());
        let t: usize = record[5].parse().map_err(|_| bad())?;
        let x: f64 = record[6].parse().map_err(|_| bad())?;
        if !x.is_finite() {
            return Err(bad());
        }
        let slot = match index.get(&key) {
            Some(&i) => i,
            None => {
                let rate: f64 = record[4].parse().map_err(|_| bad())?;
                if !(rate > 0.0) {
                    return Err(bad());
                }
                trips.push(TripRecord {
                    driver_id: key.0.clone(),
                    trip_id: key.1.clone(),
                    label: Label::from_raw(&record[2])?,
                    label_raw: record[2].to_string(),
                    road_type: record[3].parse()?,
                    sample_rate_hz: rate,
                    samples: Vec::new(),
                });
                index.insert(key, trips.len() - 1);
                trips.len() - 1
            }
        };
        let trip = &mut trips[slot];
        if t != trip.samples.len() {
            return Err(IngestError::Interchange(format!(
                "trip {} expected t_index {} on data row {line}, found {t}",
                trip.trip_id,
                trip.samples.len()
            )));
        }
        trip.samples.push(x);
    }
    Ok(trips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripPlan {
    pub label: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkComponent {
    pub mean: f64,
    pub sd: f64,
}

/// Tail events aimed at one coefficient interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailEventSpec {
    pub interval: (f64, f64),
    pub per_1000: f64,
}

fn default_rate() -> f64 {
    10.0
}

fn default_levels() -> usize {
    6
}

/// Synthetic cohort description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub drivers: usize,
    pub trips_per_driver: Vec<TripPlan>,
    pub bulk_params: [BulkComponent; 2],
    /// Keyed by raw label (`normal1`) or class name (`normal`).
    #[serde(default)]
    pub tail_events: BTreeMap<String, Vec<TailEventSpec>>,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// Decomposition depth the event amplitudes are calibrated against.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let fail = |m: String| Err(IngestError::InfeasibleSpec(m));
        if self.drivers == 0 || self.trips_per_driver.is_empty() {
            return fail("cohort needs at least one driver and one trip".into());
        }
        if !(self.sample_rate_hz > 0.0) {
            return fail("sample rate must be positive".into());
        }
        if self.levels == 0 {
            return fail("levels must be at least 1".into());
        }
        let min_len = min_trip_len(self.levels);
        for plan in &self.trips_per_driver {
            Label::from_raw(&plan.label)?;
            if !(plan.duration_s > 0.0) {
                return fail(format!("trip {} has nonpositive duration", plan.label));
            }
            let len = (plan.duration_s * self.sample_rate_hz).round() as usize;
            if len < min_len {
                return fail(format!("trip {} has {len} samples, need {min_len}", plan.label));
            }
        }
        if self.bulk_params.iter().any(|b| !(b.sd > 0.0) || !b.mean.is_finite()) {
            return fail("bulk sds must be positive".into());
        }
        let bulk_lo = self.bulk_params.iter().map(|b| b.mean - 3.0 * b.sd).fold(f64::INFINITY, f64::min);
        let bulk_hi = self.bulk_params.iter().map(|b| b.mean + 3.0 * b.sd).fold(f64::NEG_INFINITY, f64::max);
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for (key, events) in &self.tail_events {
            if key != "normal" && key != "aggressive" && key != "drowsy" {
                Label::from_raw(key)?;
            }
            for e in events {
                let (lo, hi) = e.interval;
                if !(lo < hi) || !(e.per_1000 >= 0.0) {
                    return fail(format!("bad tail event {e:?}"));
                }
                if lo < bulk_hi && hi > bulk_lo {
                    return fail(format!("interval ({lo}, {hi}) overlaps bulk region ({bulk_lo}, {bulk_hi})"));
                }
                if !intervals.contains(&(lo, hi)) {
                    intervals.push((lo, hi));
                }
            }
        }
        for (i, a) in intervals.iter().enumerate() {
            for b in &intervals[i + 1..] {
                if a.0 < b.1 && b.0 < a.1 {
                    return fail(format!("intervals {a:?} and {b:?} overlap"));
                }
            }
        }
        Ok(())
    }

    fn events_for(&self, raw_label: &str) -> &[TailEventSpec] {
        if let Some(e) = self.tail_events.get(raw_label) {
            return e;
        }
        Label::from_raw(raw_label).ok().and_then(|l| self.tail_events.get(l.as_str())).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Record of one injected tail event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub trip_id: String,
    /// Sample index of the spike.
    pub t_index: usize,
    /// Index of the aggregated coefficient the spike was calibrated on.
    pub peak_index: usize,
    pub interval: (f64, f64),
    pub target: f64,
    pub amplitude: f64,
    pub achieved: f64,
}

impl Injection {
    pub fn landed(&self) -> bool {
        self.achieved > self.interval.0 && self.achieved < self.interval.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub trips: Vec<TripRecord>,
    pub injections: Vec<Injection>,
}

/// Response of the default aggregated coefficient to a unit spike:
/// (offset of the extreme coefficient, its signed value).
fn spike_response(levels: usize) -> Result<(usize, f64), WaveletError> {
    let len = min_trip_len(levels).max(64);
    let mut x = vec![0.0; len];
    x[0] = 1.0;
    let d = wavelet::modwt_forward(&x, levels)?;
    let c = wavelet::aggregate(&d, &AggregationRule::SignedMaxAbs, &[])?;
    let (offset, value) =
        c.values
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best });
    Ok((offset, value))
}

/// Generates a labeled cohort with a two-Gaussian bulk and isolated spikes
/// whose aggregated coefficient is steered into the requested intervals.
pub fn generate_cohort(spec: &CohortSpec) -> Result<SyntheticCohort, IngestError> {
    spec.validate()?;
    let (offset, gain) = spike_response(spec.levels)?;
    let spacing = wavelet::filter_width(4, spec.levels) + 1;
    let bulk: Vec<Normal<f64>> =
        spec.bulk_params.iter().map(|b| Normal::new(b.mean, b.sd).expect("validated sd")).collect();

    let mut trips = Vec::new();
    let mut injections = Vec::new();
    for d in 1..=spec.drivers {
        let driver_id = format!("D{d}");
        for (k, plan) in spec.trips_per_driver.iter().enumerate() {
            let trip_id = format!("{driver_id}-T{:02}-{}", k + 1, plan.label);
            let mut rng = seeds::rng_for(spec.seed, &trip_id);
            let len = (plan.duration_s * spec.sample_rate_hz).round() as usize;
            let mut samples: Vec<f64> = (0..len)
                .map(|_| {
                    let c = usize::from(rng.random::<bool>());
                    bulk[c].sample(&mut rng)
                })
                .collect();

            let mut taken: Vec<usize> = Vec::new();
            let mut planned: Vec<(usize, (f64, f64), f64)> = Vec::new();
            let mut dropped = 0;
            for event in spec.events_for(&plan.label) {
                let mean = event.per_1000 * len as f64 / 1000.0;
                let count =
                    if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize } else { 0 };
                let (lo, hi) = event.interval;
                let margin = 0.1 * (hi - lo);
                for _ in 0..count {
                    let slot = (0..1000).map(|_| rng.random_range(0..len)).find(|&t| {
                        taken.iter().all(|&s| {
                            let gap = t.abs_diff(s);
                            gap.min(len - gap) >= spacing
                        })
                    });
                    let target = rng.random_range(lo + margin..hi - margin);
                    match slot {
                        Some(t) => {
                            taken.push(t);
                            planned.push((t, event.interval, target));
                        }
                        None => dropped += 1,
                    }
                }
            }
            if dropped > 0 {
                log::warn!("{trip_id}: no room for {dropped} events, dropped");
            }

            let base = samples.clone();
            let mut amplitudes: Vec<f64> = planned.iter().map(|p| p.2 / gain).collect();
            let mut achieved = vec![0.0; planned.len()];
            for _round in 0..8 {
                samples.copy_from_slice(&base);
                for ((t, _, _), a) in planned.iter().zip(&amplitudes) {
                    samples[*t] += a;
                }
                if planned.is_empty() {
                    break;
                }
                let dec = wavelet::modwt_forward(&samples, spec.levels)?;
                let agg = wavelet::aggregate(&dec, &AggregationRule::SignedMaxAbs, &[])?;
                let mut settled = true;
                for (i, (t, (lo, hi), target)) in planned.iter().enumerate() {
                    let c = agg.values[(t + offset) % len];
                    achieved[i] = c;
                    if (c - target).abs() > 1e-3 * (hi - lo) {
                        settled = false;
                        amplitudes[i] += (target - c) / gain;
                    }
                }
                if settled {
                    break;
                }
            }
            for (i, (t, interval, target)) in planned.into_iter().enumerate() {
                injections.push(Injection {
                    trip_id: trip_id.clone(),
                    t_index: t,
                    peak_index: (t + offset) % len,
                    interval,
                    target,
                    amplitude: amplitudes[i],
                    achieved: achieved[i],
                });
            }
            trips.push(TripRecord {
                driver_id: driver_id.clone(),
                trip_id,
                label: Label::from_raw(&plan.label)?,
                label_raw: plan.label.clone(),
                road_type: RoadType::Synthetic,
                sample_rate_hz: spec.sample_rate_hz,
                samples,
            });
        }
    }
    Ok(SyntheticCohort { trips, injections })
}
