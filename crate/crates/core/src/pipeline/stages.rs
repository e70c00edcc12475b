use super::artifacts::{create_csv, create_raw, field, read_csv_from, read_json_from, write_json};
use super::config::{Criterion, DepthSetting, GammaSetting, Scheme};
use super::{Pipeline, PipelineError};
use crate::classifier::{evaluate_lodo, evaluate_repeated_kfold, gamma_search, LabeledProfile, ScoreOptions};
use crate::portfolio::{build_portfolio, thin_with_seed, TripSeries};
use crate::risk::{
    eb_priors, mltc, trip_index, DriverPosterior, GammaPrior, LayerSystem, MltcProfile, SeverityWeights,
};
use crate::severity::{fit_cell, MemrFit, SelectionRow, SelectionTable, SeverityModel};
use crate::trip::{
    fmt_f64, generate_cohort, load_uah_dataset, read_trips_csv, write_trips_csv, CohortSpec, Label, TripRecord,
};
use crate::wavelet::{self, AggregatedSeries, DepthSelection};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Synth,
    Decompose,
    Portfolio,
    Fit,
    Weights,
    Score,
    Classify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Synth,
        Stage::Decompose,
        Stage::Portfolio,
        Stage::Fit,
        Stage::Weights,
        Stage::Score,
        Stage::Classify,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Decompose => "decompose",
            Stage::Portfolio => "portfolio",
            Stage::Fit => "fit",
            Stage::Weights => "weights",
            Stage::Score => "score",
            Stage::Classify => "classify",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::config(format!("unknown stage {s:?}")))
    }
}

pub(super) fn run(p: &Pipeline, stage: Stage) -> Result<(), PipelineError> {
    match stage {
        Stage::Ingest => ingest(p),
        Stage::Synth => synth(p),
        Stage::Decompose => decompose(p),
        Stage::Portfolio => portfolio(p),
        Stage::Fit => fit(p),
        Stage::Weights => weights(p),
        Stage::Score => score(p),
        Stage::Classify => classify(p),
        Stage::Report => report(p),
    }
}

fn write_trips(p: &Pipeline, trips: &[TripRecord]) -> Result<(), PipelineError> {
    create_raw(p, "trips.csv", |out| Ok(write_trips_csv(out, trips)?))
}

fn load_trips(p: &Pipeline) -> Result<Vec<TripRecord>, PipelineError> {
    let path = p.config.input.trips_csv.clone().unwrap_or_else(|| p.path("trips.csv"));
    if !path.exists() {
        return Err(super::artifacts::missing(&path, "ingest` or `telerisk synth"));
    }
    let trips = read_trips_csv(BufReader::new(File::open(&path)?))
        .map_err(|e| PipelineError::from(e).context(path.display()))?;
    if trips.is_empty() {
        return Err(PipelineError::data(format!("{}: no trips", path.display())));
    }
    Ok(trips)
}

fn ingest(p: &Pipeline) -> Result<(), PipelineError> {
    let root = p.config.input.uah_root.as_ref().ok_or_else(|| PipelineError::config("ingest needs input.uah_root"))?;
    let trips = load_uah_dataset(root, &p.config.uah)?;
    log::info!("ingested {} trips, {} samples", trips.len(), trips.iter().map(|t| t.len()).sum::<usize>());
    write_trips(p, &trips)
}

fn synth(p: &Pipeline) -> Result<(), PipelineError> {
    let path =
        p.config.input.cohort_spec.as_ref().ok_or_else(|| PipelineError::config("synth needs input.cohort_spec"))?;
    let text = std::fs::read_to_string(path)?;
    let spec: CohortSpec =
        serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
    let cohort = generate_cohort(&spec)?;
    let missed = cohort.injections.iter().filter(|i| !i.landed()).count();
    if missed > 0 {
        log::warn!("{missed} of {} injected events missed their interval", cohort.injections.len());
    }
    write_trips(p, &cohort.trips)?;
    let mut w = create_csv(
        p,
        "injections.csv",
        &["trip_id", "t_index", "peak_index", "lo", "hi", "target", "amplitude", "achieved", "landed"],
    )?;
    for i in &cohort.injections {
        w.write_record([
            i.trip_id.clone(),
            i.t_index.to_string(),
            i.peak_index.to_string(),
            fmt_f64(i.interval.0),
            fmt_f64(i.interval.1),
            fmt_f64(i.target),
            fmt_f64(i.amplitude),
            fmt_f64(i.achieved),
            i.landed().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-trip depth rule; the cohort uses the deepest selection.
fn auto_depth(p: &Pipeline, trips: &[TripRecord]) -> Result<(usize, Vec<DepthSelection>), PipelineError> {
    let w = &p.config.wavelet;
    let filter_len = w.family.filters().width();
    let picks: Vec<DepthSelection> = trips
        .par_iter()
        .map(|t| {
            let mut cap = w.max_depth.min(wavelet::full_depth(t.len()));
            while cap > 0 && wavelet::filter_width(filter_len, cap) > t.len() {
                cap -= 1;
            }
            if cap == 0 {
                return Err(PipelineError::data(format!("trip {}: too short to decompose", t.trip_id)));
            }
            let d = wavelet::modwt_forward_with(&t.samples, cap, w.family)
                .map_err(|e| PipelineError::from(e).context(format!("trip {}", t.trip_id)))?;
            let rho = wavelet::variance_contributions(&t.samples, &d)
                .map_err(|e| PipelineError::from(e).context(format!("trip {}", t.trip_id)))?;
            Ok(wavelet::select_depth(&rho, w.drop_threshold, cap))
        })
        .collect::<Result<_, PipelineError>>()?;
    let depth = picks.iter().map(|s| s.levels).max().unwrap_or(1);
    Ok((depth, picks))
}

struct Decomposed {
    aggregated: AggregatedSeries,
    rho: Vec<f64>,
    coeffs: Option<Vec<Vec<f64>>>,
}

fn decompose(p: &Pipeline) -> Result<(), PipelineError> {
    let trips = load_trips(p)?;
    let w = &p.config.wavelet;
    let (depth, picks) = match w.depth {
        DepthSetting::Fixed(j) => (j, None),
        DepthSetting::Auto(_) => {
            let (j, picks) = auto_depth(p, &trips)?;
            log::info!("auto depth selected J = {j}");
            (j, Some(picks))
        }
    };
    if w.levels.iter().any(|&l| l > depth) {
        return Err(PipelineError::config(format!("wavelet.levels exceed the chosen depth {depth}")));
    }
    let parts: Vec<Decomposed> = trips
        .par_iter()
        .map(|t| {
            let ctx = |e: PipelineError| e.context(format!("trip {}", t.trip_id));
            let mut d = wavelet::modwt_forward_with(&t.samples, depth, w.family).map_err(|e| ctx(e.into()))?;
            d.trip_id = t.trip_id.clone();
            let rho = wavelet::variance_contributions(&t.samples, &d).map_err(|e| ctx(e.into()))?;
            let aggregated = wavelet::aggregate(&d, &w.rule, &w.levels).map_err(|e| ctx(e.into()))?;
            let coeffs = w.write_coefficients.then(|| d.wavelet_coeffs.clone());
            Ok(Decomposed { aggregated, rho, coeffs })
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut agg = create_csv(p, "aggregated.csv", &["trip_id", "t_index", "c"])?;
    for d in &parts {
        for (t, c) in d.aggregated.values.iter().enumerate() {
            agg.write_record([d.aggregated.trip_id.as_str(), &t.to_string(), &fmt_f64(*c)])?;
        }
    }
    agg.flush()?;

    let mut var = create_csv(p, "variance.csv", &["trip_id", "level", "rho", "cumulative"])?;
    for d in &parts {
        let mut acc = 0.0;
        for (j, r) in d.rho.iter().enumerate() {
            acc += r;
            var.write_record([d.aggregated.trip_id.as_str(), &(j + 1).to_string(), &fmt_f64(*r), &fmt_f64(acc)])?;
        }
    }
    var.flush()?;

    if w.write_coefficients {
        let mut out = create_csv(p, "decomposition.csv", &["trip_id", "level", "t_index", "coef"])?;
        for d in &parts {
            for (j, level) in d.coeffs.iter().flatten().enumerate() {
                for (t, c) in level.iter().enumerate() {
                    out.write_record([
                        d.aggregated.trip_id.as_str(),
                        &(j + 1).to_string(),
                        &t.to_string(),
                        &fmt_f64(*c),
                    ])?;
                }
            }
        }
        out.flush()?;
    }

    let per_trip = picks.map(|picks| {
        trips
            .iter()
            .zip(picks)
            .map(|(t, s)| json!({"trip_id": t.trip_id, "selected": s.levels, "capped": s.capped}))
            .collect::<Vec<_>>()
    });
    write_json(
        p,
        "depth.json",
        json!({
            "depth": depth,
            "family": w.family,
            "rule": w.rule,
            "levels": w.levels,
            "auto": per_trip,
        }),
    )
}

fn read_aggregated(p: &Pipeline) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
    let rows = read_csv_from(p, "aggregated.csv", "decompose", &["trip_id", "t_index", "c"])?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &rows {
        let trip = row.get(0).unwrap_or_default();
        let t: usize = field(row, 1, "aggregated.csv")?;
        let c: f64 = field(row, 2, "aggregated.csv")?;
        let series = out.entry(trip.to_string()).or_default();
        if t != series.len() {
            return Err(PipelineError::data(format!("aggregated.csv: trip {trip} index {t} out of order")));
        }
        series.push(c);
    }
    Ok(out)
}

fn trip_series(p: &Pipeline, trips: &[TripRecord]) -> Result<Vec<TripSeries>, PipelineError> {
    let mut agg = read_aggregated(p)?;
    trips
        .iter()
        .map(|t| {
            let values = agg
                .remove(&t.trip_id)
                .ok_or_else(|| PipelineError::data(format!("trip {} missing from aggregated.csv", t.trip_id)))?;
            Ok(TripSeries {
                driver_id: t.driver_id.clone(),
                series: AggregatedSeries {
                    trip_id: t.trip_id.clone(),
                    values,
                    rule: p.config.wavelet.rule.clone(),
                    levels_used: p.config.wavelet.levels.clone(),
                },
            })
        })
        .collect()
}

fn portfolio(p: &Pipeline) -> Result<(), PipelineError> {
    let cfg = &p.config;
    let trips = load_trips(p)?;
    let series = trip_series(p, &trips)?;
    let sample = build_portfolio(&series, cfg.portfolio, &cfg.thinning, cfg.seed)?;
    log::info!(
        "portfolio holds {} of {} coefficients",
        sample.len(),
        series.iter().map(|s| s.series.len()).sum::<usize>()
    );

    let mut w = create_csv(p, "portfolio.csv", &["driver_id", "trip_id", "t_index", "c"])?;
    for pt in &sample.points {
        w.write_record([pt.driver_id.as_str(), pt.trip_id.as_str(), &pt.t_index.to_string(), &fmt_f64(pt.value)])?;
    }
    w.flush()?;

    // every trip needs its retained set for the counts, pooled or not
    let reports = series
        .par_iter()
        .map(|s| {
            thin_with_seed(&s.series, &cfg.thinning, cfg.seed)
                .map_err(|e| PipelineError::from(e).context(format!("trip {}", s.series.trip_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut w =
        create_csv(p, "thinning.csv", &["driver_id", "trip_id", "length", "lag", "start", "exposure", "pooled"])?;
    for (s, r) in series.iter().zip(&reports) {
        w.write_record([
            s.driver_id.as_str(),
            r.trip_id.as_str(),
            &s.series.len().to_string(),
            &r.chosen_lag.to_string(),
            &r.start_offset.to_string(),
            &r.exposure().to_string(),
            &sample.reports.contains_key(&r.trip_id).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CachedCell {
    key: String,
    row: SelectionRow,
    fit: Option<MemrFit>,
}

fn read_portfolio_values(p: &Pipeline) -> Result<Vec<f64>, PipelineError> {
    let rows = read_csv_from(p, "portfolio.csv", "portfolio", &["driver_id", "trip_id", "t_index", "c"])?;
    rows.iter().map(|r| field(r, 3, "portfolio.csv")).collect()
}

fn fit(p: &Pipeline) -> Result<(), PipelineError> {
    let cfg = &p.config;
    let data = read_portfolio_values(p)?;
    if data.is_empty() {
        return Err(PipelineError::data("portfolio.csv is empty"));
    }
    let mut h = Sha256::new();
    for x in &data {
        h.update(x.to_le_bytes());
    }
    let data_digest = hex::encode(h.finalize());
    let cells_dir = p.path("fit_cells");
    std::fs::create_dir_all(&cells_dir)?;

    let sel = &cfg.selection;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &g in &sel.g {
        for &ml in &sel.m_left {
            for &mr in &sel.m_right {
                let key_src = serde_json::to_string(&json!({
                    "severity": cfg.severity, "seed": cfg.seed, "data": data_digest, "cell": [g, ml, mr],
                }))?;
                let key = hex::encode(Sha256::digest(key_src.as_bytes()));
                let path = cells_dir.join(format!("g{g}_ml{ml}_mr{mr}.json"));
                let cached = if p.resume && path.exists() {
                    std::fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| serde_json::from_str::<CachedCell>(&s).ok())
                        .filter(|c| c.key == key)
                } else {
                    None
                };
                let cell = match cached {
                    Some(c) => {
                        log::info!("reusing cell G={g} M-={ml} M+={mr}");
                        c
                    }
                    None => {
                        let (row, fit) = fit_cell(&data, g, ml, mr, &cfg.severity, cfg.seed);
                        let c = CachedCell { key, row, fit };
                        std::fs::write(&path, serde_json::to_string(&c)?)?;
                        c
                    }
                };
                rows.push(cell.row);
                fits.push(cell.fit);
            }
        }
    }
    let table = SelectionTable::from_rows(rows, fits);

    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut w = create_csv(p, "selection.csv", &["G", "Mminus", "Mplus", "loglik", "aic", "bic", "status"])?;
    for r in &table.rows {
        w.write_record([
            r.g.to_string(),
            r.m_left.to_string(),
            r.m_right.to_string(),
            opt(r.log_lik),
            opt(r.aic),
            opt(r.bic),
            r.status.clone(),
        ])?;
    }
    w.flush()?;

    let best = match sel.criterion {
        Criterion::LogLik => table.best_log_lik,
        Criterion::Aic => table.best_aic,
        Criterion::Bic => table.best_bic,
    }
    .ok_or_else(|| PipelineError::numerical("all selection cells failed"))?;
    let fit = table.fits[best].as_ref().expect("best row has a fit");
    let row = &table.rows[best];
    let mut body = serde_json::to_value(&fit.model)?;
    body["selection"] = json!({
        "criterion": sel.criterion,
        "G": row.g,
        "Mminus": row.m_left,
        "Mplus": row.m_right,
        "params": row.params,
        "aic": row.aic,
        "bic": row.bic,
        "candidate_index": fit.candidate_index,
        "candidates_run": fit.candidates_run,
        "candidates_rejected": fit.candidates_rejected,
        "iterations": fit.trace.iterations,
        "converged": fit.trace.converged,
    });
    log::info!("selected G={} M-={} M+={} by {:?}", row.g, row.m_left, row.m_right, sel.criterion);
    write_json(p, "model.json", body)
}

fn read_model(p: &Pipeline) -> Result<SeverityModel, PipelineError> {
    let path = p.path("model.json");
    if !path.exists() {
        return Err(PipelineError::data(format!(
            "model missing: {} not found; run `telerisk fit` first",
            path.display()
        )));
    }
    let mut v = read_json_from(p, "model.json", "fit")?;
    if let serde_json::Value::Object(map) = &mut v {
        map.remove("selection");
    }
    serde_json::from_value(v).map_err(|e| PipelineError::data(format!("model.json: {e}")))
}

/// Trip metadata carried next to each count profile.
#[derive(Debug, Clone)]
struct ProfileRow {
    label: Label,
    label_raw: String,
    road: String,
    profile: MltcProfile,
}

const PROFILE_COLUMNS: [&str; 6] = ["driver_id", "trip_id", "label", "label_raw", "road_type", "exposure"];

fn weights(p: &Pipeline) -> Result<(), PipelineError> {
    let cfg = &p.config;
    let model = read_model(p)?;
    let layers = LayerSystem::from_model(&model);
    let trips = load_trips(p)?;
    let series = trip_series(p, &trips)?;
    let thin =
        read_csv_from(p, "thinning.csv", "portfolio", &["driver_id", "trip_id", "length", "lag", "start", "exposure"])?;
    let mut retained: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for row in &thin {
        let trip = row.get(1).unwrap_or_default().to_string();
        retained.insert(
            trip,
            (field(row, 2, "thinning.csv")?, field(row, 3, "thinning.csv")?, field(row, 4, "thinning.csv")?),
        );
    }
    let mut rows = Vec::with_capacity(trips.len());
    for (t, s) in trips.iter().zip(&series) {
        let (len, lag, start) = *retained
            .get(&t.trip_id)
            .ok_or_else(|| PipelineError::data(format!("trip {} missing from thinning.csv", t.trip_id)))?;
        if len != s.series.len() || lag == 0 {
            return Err(PipelineError::data(format!("thinning.csv disagrees with aggregated.csv for {}", t.trip_id)));
        }
        let idx: Vec<usize> = (start..len).step_by(lag).collect();
        let profile = mltc(&t.driver_id, &t.trip_id, &s.series.values, &idx, &layers)
            .map_err(|e| PipelineError::from(e).context(format!("trip {}", t.trip_id)))?;
        rows.push(ProfileRow {
            label: t.label,
            label_raw: t.label_raw.clone(),
            road: t.road_type.to_string(),
            profile,
        });
    }

    let labels = layers.labels();
    let mut columns: Vec<String> = PROFILE_COLUMNS.iter().map(|s| s.to_string()).collect();
    columns.extend((1..=labels.len()).map(|m| format!("N_{m}")));
    let mut w = create_csv(p, "profiles.csv", &columns)?;
    for r in &rows {
        let mut rec = vec![
            r.profile.driver_id.clone(),
            r.profile.trip_id.clone(),
            r.label.as_str().to_string(),
            r.label_raw.clone(),
            r.road.clone(),
            r.profile.exposure.to_string(),
        ];
        rec.extend(r.profile.counts.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let profiles: Vec<MltcProfile> = rows.iter().map(|r| r.profile.clone()).collect();
    let prior = eb_priors(&profiles, cfg.risk.omega)?;
    write_json(p, "prior.json", json!({ "layers": labels, "prior": prior }))?;

    let pis = layers.probabilities();
    let (gamma, source) = match cfg.risk.gamma {
        GammaSetting::Fixed(g) => (g, "fixed"),
        GammaSetting::Search(_) => {
            let cohort = labeled(&rows);
            let found = gamma_search(&cohort, &pis, &cfg.risk.gamma_grid, cfg.risk.omega, &cfg.cv())?;
            let mut w = create_csv(p, "gamma_search.csv", &["gamma", "lodo_ba"])?;
            for (g, ba) in &found.scores {
                w.write_record([fmt_f64(*g), fmt_f64(*ba)])?;
            }
            w.flush()?;
            log::info!("gamma search picked {}", found.best_gamma);
            (found.best_gamma, "search")
        }
    };
    let sw = crate::risk::severity_weights(&pis, gamma)?;
    write_json(
        p,
        "weights.json",
        json!({ "gamma": gamma, "source": source, "layers": labels, "pis": pis, "weights": sw.weights }),
    )
}

fn labeled(rows: &[ProfileRow]) -> Vec<LabeledProfile> {
    rows.iter().map(|r| LabeledProfile { profile: r.profile.clone(), risky: r.label.is_risky() }).collect()
}

fn read_profiles(p: &Pipeline) -> Result<Vec<ProfileRow>, PipelineError> {
    let rows = read_csv_from(p, "profiles.csv", "weights", &PROFILE_COLUMNS)?;
    rows.iter()
        .map(|row| {
            let text = |i: usize| row.get(i).unwrap_or_default().to_string();
            let counts = (PROFILE_COLUMNS.len()..row.len())
                .map(|i| field::<u64>(row, i, "profiles.csv"))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ProfileRow {
                label: Label::from_raw(&text(2))?,
                label_raw: text(3),
                road: text(4),
                profile: MltcProfile {
                    driver_id: text(0),
                    trip_id: text(1),
                    exposure: field(row, 5, "profiles.csv")?,
                    counts,
                },
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct WeightsFile {
    gamma: f64,
    layers: Vec<String>,
    pis: Vec<f64>,
    weights: Vec<f64>,
}

fn read_weights(p: &Pipeline) -> Result<WeightsFile, PipelineError> {
    let v = read_json_from(p, "weights.json", "weights")?;
    let w: WeightsFile = serde_json::from_value(v).map_err(|e| PipelineError::data(format!("weights.json: {e}")))?;
    if w.pis.len() != w.weights.len() || w.layers.len() != w.weights.len() {
        return Err(PipelineError::data("weights.json: layer lists differ in length"));
    }
    Ok(w)
}

fn read_prior(p: &Pipeline) -> Result<GammaPrior, PipelineError> {
    let v = read_json_from(p, "prior.json", "weights")?;
    serde_json::from_value(v["prior"].clone()).map_err(|e| PipelineError::data(format!("prior.json: {e}")))
}

fn score(p: &Pipeline) -> Result<(), PipelineError> {
    let cfg = &p.config;
    let rows = read_profiles(p)?;
    let prior = read_prior(p)?;
    let wf = read_weights(p)?;
    let sw = SeverityWeights { gamma: wf.gamma, weights: wf.weights };
    let rank = |raw: &str| cfg.risk.trip_order.iter().position(|o| o == raw).unwrap_or(usize::MAX);

    let mut by_driver: BTreeMap<&str, Vec<&ProfileRow>> = BTreeMap::new();
    for r in &rows {
        if cfg.risk.road_type.is_some_and(|road| road.as_str() != r.road) {
            continue;
        }
        by_driver.entry(&r.profile.driver_id).or_default().push(r);
    }
    if by_driver.is_empty() {
        return Err(PipelineError::data("no trips left after the road filter"));
    }
    let mut columns: Vec<String> =
        ["driver_id", "trip_id", "label", "exposure", "trip_index", "updated_index"].map(String::from).to_vec();
    columns.extend((1..=sw.weights.len()).map(|m| format!("N_{m}")));
    let mut w = create_csv(p, "scores.csv", &columns)?;
    for (driver, mut trips) in by_driver {
        trips.sort_by(|a, b| (rank(&a.label_raw), &a.profile.trip_id).cmp(&(rank(&b.label_raw), &b.profile.trip_id)));
        let mut post = DriverPosterior::new(driver, &prior);
        for r in trips {
            let ti = trip_index(&r.profile, &prior, &sw)?;
            post.update(&r.profile)?;
            let mut rec = vec![
                r.profile.driver_id.clone(),
                r.profile.trip_id.clone(),
                r.label_raw.clone(),
                r.profile.exposure.to_string(),
                fmt_f64(ti.index),
                fmt_f64(post.index(&sw)?),
            ];
            rec.extend(r.profile.counts.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn classify(p: &Pipeline) -> Result<(), PipelineError> {
    let cfg = &p.config;
    let rows = read_profiles(p)?;
    let wf = read_weights(p)?;
    let cohort = labeled(&rows);
    let label_of: BTreeMap<&str, &str> = rows.iter().map(|r| (r.profile.trip_id.as_str(), r.label.as_str())).collect();
    let cv = cfg.cv();

    let mut results = create_csv(p, "cv_results.csv", &["scheme", "ablation", "gamma", "fold", "repeat", "ba", "tau"])?;
    let mut oof = create_csv(p, "oof.csv", &["scheme", "ablation", "trip_id", "label", "p_risky", "tau"])?;
    let mut summary = create_csv(p, "cv_summary.csv", &["scheme", "ablation", "gamma", "mean_ba", "std_err", "folds"])?;
    for &scheme in &cfg.classify.schemes {
        for &ablation in &cfg.classify.ablations {
            let opts = ScoreOptions { ablation, gamma: wf.gamma, layer_pis: wf.pis.clone(), omega: cfg.risk.omega };
            let s = match scheme {
                Scheme::Kfold => evaluate_repeated_kfold(&cohort, &opts, &cv),
                Scheme::Lodo => evaluate_lodo(&cohort, &opts, &cv),
            }
            .map_err(|e| PipelineError::from(e).context(format!("{} ablation {}", scheme.as_str(), ablation.code())))?;
            log::info!("{} {}: mean BA {:.4}", scheme.as_str(), ablation.code(), s.mean_ba);
            for f in &s.folds {
                results.write_record([
                    scheme.as_str().to_string(),
                    ablation.code().to_string(),
                    fmt_f64(f.gamma),
                    f.fold.to_string(),
                    f.repeat.to_string(),
                    fmt_f64(f.ba),
                    fmt_f64(f.tau),
                ])?;
            }
            for t in &s.predictions {
                oof.write_record([
                    scheme.as_str(),
                    ablation.code(),
                    t.trip_id.as_str(),
                    label_of.get(t.trip_id.as_str()).copied().unwrap_or_default(),
                    &fmt_f64(t.p_risky),
                    &fmt_f64(t.tau),
                ])?;
            }
            summary.write_record([
                scheme.as_str().to_string(),
                ablation.code().to_string(),
                fmt_f64(wf.gamma),
                fmt_f64(s.mean_ba),
                fmt_f64(s.std_err),
                s.folds.len().to_string(),
            ])?;
        }
    }
    results.flush()?;
    oof.flush()?;
    summary.flush()?;
    Ok(())
}

fn report(p: &Pipeline) -> Result<(), PipelineError> {
    let mut written = 0;

    if p.path("selection.csv").exists() {
        let rows =
            read_csv_from(p, "selection.csv", "fit", &["G", "Mminus", "Mplus", "loglik", "aic", "bic", "status"])?;
        let num = |r: &csv::StringRecord, i: usize| r.get(i).and_then(|s| s.parse::<f64>().ok());
        let best = |i: usize, larger: bool| {
            let mut pick: Option<(usize, f64)> = None;
            for (k, r) in rows.iter().enumerate() {
                if let Some(v) = num(r, i) {
                    let better = match pick {
                        None => true,
                        Some((_, b)) => (larger && v > b) || (!larger && v < b),
                    };
                    if better {
                        pick = Some((k, v));
                    }
                }
            }
            pick.map(|(k, _)| k)
        };
        let marks = [(best(3, true), "loglik"), (best(4, false), "aic"), (best(5, false), "bic")];
        let mut w = create_csv(p, "table3.csv", &["Mminus", "G", "Mplus", "loglik", "aic", "bic", "best_by"])?;
        for (k, r) in rows.iter().enumerate() {
            let tags: Vec<&str> = marks.iter().filter(|(b, _)| *b == Some(k)).map(|(_, t)| *t).collect();
            w.write_record([
                r.get(1).unwrap_or_default(),
                r.get(0).unwrap_or_default(),
                r.get(2).unwrap_or_default(),
                r.get(3).unwrap_or_default(),
                r.get(4).unwrap_or_default(),
                r.get(5).unwrap_or_default(),
                &tags.join(";"),
            ])?;
        }
        w.flush()?;
        written += 1;
    }

    if p.path("model.json").exists() && p.path("weights.json").exists() {
        let model = read_model(p)?;
        let wf = read_weights(p)?;
        let layers = LayerSystem::from_model(&model).layers();
        let mut w = create_csv(p, "table4.csv", &["component", "mean", "sd", "lo", "hi", "pi", "weight"])?;
        for (k, g) in model.gaussians.iter().enumerate() {
            w.write_record([
                format!("N{}", k + 1),
                fmt_f64(g.mean),
                fmt_f64(g.sd),
                String::new(),
                String::new(),
                fmt_f64(g.pi),
                String::new(),
            ])?;
        }
        for (l, wt) in layers.iter().zip(&wf.weights) {
            w.write_record([
                l.label(),
                String::new(),
                String::new(),
                fmt_f64(l.lo),
                fmt_f64(l.hi),
                fmt_f64(l.pi),
                fmt_f64(*wt),
            ])?;
        }
        w.flush()?;
        written += 1;
    }

    if p.path("scores.csv").exists() {
        let rows = read_csv_from(
            p,
            "scores.csv",
            "score",
            &["driver_id", "trip_id", "label", "exposure", "trip_index", "updated_index"],
        )?;
        let mut w =
            create_csv(p, "table5.csv", &["driver_id", "trip_id", "label", "trip_index_e4", "updated_index_e4"])?;
        for r in &rows {
            let ti: f64 = field(r, 4, "scores.csv")?;
            let ui: f64 = field(r, 5, "scores.csv")?;
            w.write_record([
                r.get(0).unwrap_or_default(),
                r.get(1).unwrap_or_default(),
                r.get(2).unwrap_or_default(),
                &format!("{:.4}", ti * 1e4),
                &format!("{:.4}", ui * 1e4),
            ])?;
        }
        w.flush()?;
        written += 1;
    }

    if p.path("cv_summary.csv").exists() {
        let rows = read_csv_from(
            p,
            "cv_summary.csv",
            "classify",
            &["scheme", "ablation", "gamma", "mean_ba", "std_err", "folds"],
        )?;
        let mut w = create_csv(p, "fig4.csv", &["scheme", "ablation", "mean_ba_pct", "std_err_pct"])?;
        for r in &rows {
            let m: f64 = field(r, 3, "cv_summary.csv")?;
            let se: f64 = field(r, 4, "cv_summary.csv")?;
            w.write_record([
                r.get(0).unwrap_or_default(),
                r.get(1).unwrap_or_default(),
                &format!("{:.2}", m * 100.0),
                &format!("{:.2}", se * 100.0),
            ])?;
        }
        w.flush()?;
        written += 1;
    }

    if written == 0 {
        return Err(PipelineError::data("nothing to report; run the earlier stages first"));
    }
    Ok(())
}
