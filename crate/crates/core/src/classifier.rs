//! Two-class Poisson Bayes classifier on tail-count profiles, with nested
//! cross-validated thresholds, repeated stratified K-fold, leave-one-driver-out
//! evaluation and the severity-exponent search.

use crate::risk::{eb_priors, severity_weights, GammaPrior, MltcProfile, RiskError};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("training split holds a single class")]
    SingleClassTrainSet,
    #[error("out-of-fold probabilities cover a single class")]
    SingleClassOof,
    #[error("labels cover a single class")]
    SingleClassLabels,
    #[error("class {class} has {have} members, need at least {need}")]
    InsufficientClassMembers { class: &'static str, have: usize, need: usize },
    #[error("leave-one-driver-out needs at least two drivers")]
    SingleDriver,
    #[error("inner split stayed single-class after {0} redraws")]
    DegenerateInnerSplit(usize),
    #[error("invalid cross-validation setting: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// Which weighting of the layer counts feeds the log-score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Total tail count as a single layer.
    #[serde(rename = "A")]
    Total,
    /// Every layer weighted 1/M.
    #[serde(rename = "B")]
    Uniform,
    /// Severity weights w(gamma).
    #[serde(rename = "C")]
    Weighted,
}

impl Ablation {
    pub fn code(self) -> &'static str {
        match self {
            Ablation::Total => "A",
            Ablation::Uniform => "B",
            Ablation::Weighted => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledProfile {
    pub profile: MltcProfile,
    pub risky: bool,
}

/// Inputs that fix the score function apart from the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOptions {
    pub ablation: Ablation,
    pub gamma: f64,
    /// Layer probabilities in layer-system order.
    pub layer_pis: Vec<f64>,
    /// Winsorization rate for the prior re-fit.
    pub omega: f64,
}

impl ScoreOptions {
    pub fn weights(&self) -> Result<Vec<f64>, ClassifierError> {
        let m = self.layer_pis.len();
        Ok(match self.ablation {
            Ablation::Total => vec![1.0],
            Ablation::Uniform => vec![1.0 / m as f64; m],
            Ablation::Weighted => severity_weights(&self.layer_pis, self.gamma)?.weights,
        })
    }

    fn view(&self, p: &MltcProfile) -> MltcProfile {
        match self.ablation {
            Ablation::Total => MltcProfile { counts: vec![p.counts.iter().sum()], ..p.clone() },
            _ => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub ablation: Ablation,
    pub weights: Vec<f64>,
    /// Posterior-mean layer rates, normal class.
    pub normal_rates: Vec<f64>,
    /// Posterior-mean layer rates, risky class.
    pub risky_rates: Vec<f64>,
    /// Empirical class priors (normal, risky).
    pub class_prior: (f64, f64),
    pub prior: GammaPrior,
}

/// Class rates from an already-fitted shared prior. Profiles must already be
/// in the ablation's layer layout.
pub fn fit_with_prior(
    train: &[(&MltcProfile, bool)],
    prior: &GammaPrior,
    weights: Vec<f64>,
    ablation: Ablation,
) -> Result<ClassModel, ClassifierError> {
    let risky = train.iter().filter(|(_, r)| *r).count();
    if risky == 0 || risky == train.len() {
        return Err(ClassifierError::SingleClassTrainSet);
    }
    let m = prior.len();
    let rates = |class: bool| -> Vec<f64> {
        let members: Vec<&MltcProfile> = train.iter().filter(|(_, r)| *r == class).map(|(p, _)| *p).collect();
        let e: u64 = members.iter().map(|p| p.exposure).sum();
        (0..m)
            .map(|k| {
                let n: u64 = members.iter().map(|p| p.counts[k]).sum();
                (prior.alpha[k] + n as f64) / (prior.beta[k] + e as f64)
            })
            .collect()
    };
    let n = train.len() as f64;
    Ok(ClassModel {
        ablation,
        weights,
        normal_rates: rates(false),
        risky_rates: rates(true),
        class_prior: ((n - risky as f64) / n, risky as f64 / n),
        prior: prior.clone(),
    })
}

/// Re-fits the shared prior on the training split and the class rates.
pub fn fit_class_model(train: &[&LabeledProfile], opts: &ScoreOptions) -> Result<ClassModel, ClassifierError> {
    let views: Vec<MltcProfile> = train.iter().map(|l| opts.view(&l.profile)).collect();
    let prior = eb_priors(&views, opts.omega)?;
    let pairs: Vec<(&MltcProfile, bool)> = views.iter().zip(train).map(|(v, l)| (v, l.risky)).collect();
    fit_with_prior(&pairs, &prior, opts.weights()?, opts.ablation)
}

impl ClassModel {
    /// Log-scores (normal, risky) of a profile given in the model's layout.
    pub fn log_scores_view(&self, p: &MltcProfile) -> (f64, f64) {
        let e = p.exposure as f64;
        let score = |prior: f64, rates: &[f64]| {
            prior.ln()
                + rates
                    .iter()
                    .zip(&self.weights)
                    .zip(&p.counts)
                    .map(|((l, w), n)| w * (*n as f64 * l.ln() - e * l))
                    .sum::<f64>()
        };
        (score(self.class_prior.0, &self.normal_rates), score(self.class_prior.1, &self.risky_rates))
    }

    pub fn log_scores(&self, p: &MltcProfile) -> (f64, f64) {
        let view = match self.ablation {
            Ablation::Total => MltcProfile { counts: vec![p.counts.iter().sum()], ..p.clone() },
            _ => p.clone(),
        };
        self.log_scores_view(&view)
    }

    pub fn risky_prob(&self, p: &MltcProfile) -> f64 {
        let (d0, d1) = self.log_scores(p);
        risky_softmax(d0, d1)
    }
}

/// Probability of the second class from two log-scores.
pub fn risky_softmax(d_normal: f64, d_risky: f64) -> f64 {
    let top = d_normal.max(d_risky);
    let a = (d_normal - top).exp();
    let b = (d_risky - top).exp();
    b / (a + b)
}

/// Mean of the per-class recalls (risky = positive). Classes absent from
/// `labels` are left out of the mean.
pub fn balanced_accuracy_present(predicted: &[bool], labels: &[bool]) -> Option<f64> {
    let recall = |class: bool| {
        let members = labels.iter().filter(|l| **l == class).count();
        (members > 0).then(|| {
            predicted.iter().zip(labels).filter(|(p, l)| **l == class && **p == class).count() as f64 / members as f64
        })
    };
    match (recall(true), recall(false)) {
        (Some(tpr), Some(tnr)) => Some(0.5 * (tpr + tnr)),
        (Some(r), None) | (None, Some(r)) => Some(r),
        (None, None) => None,
    }
}

pub fn balanced_accuracy(predicted: &[bool], labels: &[bool]) -> Result<f64, ClassifierError> {
    let risky = labels.iter().filter(|l| **l).count();
    if risky == 0 || risky == labels.len() {
        return Err(ClassifierError::SingleClassLabels);
    }
    Ok(balanced_accuracy_present(predicted, labels).expect("both classes present"))
}

/// Threshold maximizing balanced accuracy over the uniform grid plus the
/// observed probabilities; ties resolve to the lower median maximizer.
pub fn select_threshold(probs: &[f64], labels: &[bool], grid_points: usize) -> Result<f64, ClassifierError> {
    let risky = labels.iter().filter(|l| **l).count();
    if risky == 0 || risky == labels.len() {
        return Err(ClassifierError::SingleClassOof);
    }
    let mut taus: Vec<f64> = (0..=grid_points).map(|k| k as f64 / grid_points as f64).collect();
    taus.extend_from_slice(probs);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let bas: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let pred: Vec<bool> = probs.iter().map(|p| *p >= tau).collect();
            balanced_accuracy_present(&pred, labels).expect("both classes present")
        })
        .collect();
    let best = bas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let maximizers: Vec<f64> = taus.iter().zip(&bas).filter(|(_, b)| **b == best).map(|(t, _)| *t).collect();
    Ok(maximizers[(maximizers.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k_out: usize,
    pub r_out: usize,
    pub k_in: usize,
    pub grid_step: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { k_out: 4, r_out: 200, k_in: 4, grid_step: 0.0025, seed: 0 }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.k_out < 2 || self.k_in < 2 || self.r_out == 0 {
            return Err(ClassifierError::BadConfig("k_out and k_in must be >= 2, r_out >= 1".into()));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return Err(ClassifierError::BadConfig("grid_step must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid_points(&self) -> usize {
        (1.0 / self.grid_step).round() as usize
    }
}

/// Stratified fold ids: each class is shuffled and dealt round-robin, the
/// second class continuing where the first stopped.
pub fn stratified_folds<R: Rng>(labels: &[bool], k: usize, rng: &mut R) -> Vec<usize> {
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    folds
}

fn class_counts(items: &[&LabeledProfile]) -> (usize, usize) {
    let risky = items.iter().filter(|l| l.risky).count();
    (items.len() - risky, risky)
}

/// Out-of-fold risky probabilities on `train` from a stratified inner CV.
/// Inner splits that leave a training part single-class are redrawn up to
/// ten times.
pub fn inner_oof(
    train: &[&LabeledProfile],
    opts: &ScoreOptions,
    cfg: &CvConfig,
    stream: &[u64],
) -> Result<Vec<f64>, ClassifierError> {
    let labels: Vec<bool> = train.iter().map(|l| l.risky).collect();
    for attempt in 0..10u64 {
        let mut idx = stream.to_vec();
        idx.push(attempt);
        let mut rng = seeds::rng_for_indexed(cfg.seed, "cv/inner", &idx);
        let folds = stratified_folds(&labels, cfg.k_in, &mut rng);
        let mut probs = vec![f64::NAN; train.len()];
        let mut degenerate = false;
        for f in 0..cfg.k_in {
            let fit_part: Vec<&LabeledProfile> =
                train.iter().zip(&folds).filter(|(_, g)| **g != f).map(|(l, _)| *l).collect();
            let model = match fit_class_model(&fit_part, opts) {
                Ok(m) => m,
                Err(ClassifierError::SingleClassTrainSet) => {
                    degenerate = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            for (i, l) in train.iter().enumerate() {
                if folds[i] == f {
                    probs[i] = model.risky_prob(&l.profile);
                }
            }
        }
        if !degenerate {
            return Ok(probs);
        }
    }
    Err(ClassifierError::DegenerateInnerSplit(10))
}

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub scheme: String,
    pub ablation: Ablation,
    pub gamma: f64,
    pub fold: usize,
    pub repeat: usize,
    /// Held-out driver for leave-one-driver-out folds.
    pub driver_id: Option<String>,
    pub ba: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub fold: usize,
    pub repeat: usize,
    pub trip_id: String,
    pub risky: bool,
    pub p_risky: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
    pub predictions: Vec<TestPrediction>,
    pub mean_ba: f64,
    pub std_err: f64,
}

/// Fits on `train`, picks the threshold from inner out-of-fold
/// probabilities and scores `test`. Test labels are only read for the
/// returned balanced accuracy.
pub fn outer_fold(
    train: &[&LabeledProfile],
    test: &[&LabeledProfile],
    opts: &ScoreOptions,
    cfg: &CvConfig,
    stream: &[u64],
) -> Result<(f64, Vec<f64>, f64), ClassifierError> {
    let oof = inner_oof(train, opts, cfg, stream)?;
    let train_labels: Vec<bool> = train.iter().map(|l| l.risky).collect();
    let tau = select_threshold(&oof, &train_labels, cfg.grid_points())?;
    let model = fit_class_model(train, opts)?;
    let probs: Vec<f64> = test.iter().map(|l| model.risky_prob(&l.profile)).collect();
    let pred: Vec<bool> = probs.iter().map(|p| *p >= tau).collect();
    let labels: Vec<bool> = test.iter().map(|l| l.risky).collect();
    let ba = balanced_accuracy_present(&pred, &labels).ok_or(ClassifierError::SingleClassLabels)?;
    Ok((tau, probs, ba))
}

fn summarize(folds: Vec<FoldResult>, predictions: Vec<TestPrediction>) -> CvSummary {
    let n = folds.len() as f64;
    let mean = folds.iter().map(|f| f.ba).sum::<f64>() / n;
    let var = if folds.len() > 1 { folds.iter().map(|f| (f.ba - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    CvSummary { folds, predictions, mean_ba: mean, std_err: (var / n).sqrt() }
}

type FoldOutput = (FoldResult, Vec<TestPrediction>);

/// Repeated stratified K-fold with nested threshold selection.
pub fn evaluate_repeated_kfold(
    cohort: &[LabeledProfile],
    opts: &ScoreOptions,
    cfg: &CvConfig,
) -> Result<CvSummary, ClassifierError> {
    cfg.validate()?;
    let labels: Vec<bool> = cohort.iter().map(|l| l.risky).collect();
    let all: Vec<&LabeledProfile> = cohort.iter().collect();
    let (normal, risky) = class_counts(&all);
    for (class, have) in [("normal", normal), ("risky", risky)] {
        if have < cfg.k_out {
            return Err(ClassifierError::InsufficientClassMembers { class, have, need: cfg.k_out });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.r_out).flat_map(|r| (0..cfg.k_out).map(move |f| (r, f))).collect();
    let results: Vec<FoldOutput> = jobs
        .par_iter()
        .map(|&(repeat, fold)| {
            let mut rng = seeds::rng_for_indexed(cfg.seed, "cv/outer", &[repeat as u64]);
            let folds = stratified_folds(&labels, cfg.k_out, &mut rng);
            let train: Vec<&LabeledProfile> =
                all.iter().zip(&folds).filter(|(_, g)| **g != fold).map(|(l, _)| *l).collect();
            let test: Vec<&LabeledProfile> =
                all.iter().zip(&folds).filter(|(_, g)| **g == fold).map(|(l, _)| *l).collect();
            let (tau, probs, ba) = outer_fold(&train, &test, opts, cfg, &[repeat as u64, fold as u64])?;
            let preds = test
                .iter()
                .zip(probs)
                .map(|(l, p)| TestPrediction {
                    fold,
                    repeat,
                    trip_id: l.profile.trip_id.clone(),
                    risky: l.risky,
                    p_risky: p,
                    tau,
                })
                .collect();
            let result = FoldResult {
                scheme: "kfold".into(),
                ablation: opts.ablation,
                gamma: opts.gamma,
                fold,
                repeat,
                driver_id: None,
                ba,
                tau,
            };
            Ok((result, preds))
        })
        .collect::<Result<_, ClassifierError>>()?;
    let (folds, preds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(summarize(folds, preds.into_iter().flatten().collect()))
}

/// One fold per driver, thresholds from inner CV on the other drivers.
pub fn evaluate_lodo(
    cohort: &[LabeledProfile],
    opts: &ScoreOptions,
    cfg: &CvConfig,
) -> Result<CvSummary, ClassifierError> {
    cfg.validate()?;
    let drivers: Vec<&str> =
        cohort.iter().map(|l| l.profile.driver_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    if drivers.len() < 2 {
        return Err(ClassifierError::SingleDriver);
    }
    let results: Vec<FoldOutput> = drivers
        .par_iter()
        .enumerate()
        .map(|(fold, driver)| {
            let train: Vec<&LabeledProfile> = cohort.iter().filter(|l| l.profile.driver_id != *driver).collect();
            let test: Vec<&LabeledProfile> = cohort.iter().filter(|l| l.profile.driver_id == *driver).collect();
            let (tau, probs, ba) = outer_fold(&train, &test, opts, cfg, &[u64::MAX, fold as u64])?;
            let preds = test
                .iter()
                .zip(probs)
                .map(|(l, p)| TestPrediction {
                    fold,
                    repeat: 0,
                    trip_id: l.profile.trip_id.clone(),
                    risky: l.risky,
                    p_risky: p,
                    tau,
                })
                .collect();
            let result = FoldResult {
                scheme: "lodo".into(),
                ablation: opts.ablation,
                gamma: opts.gamma,
                fold,
                repeat: 0,
                driver_id: Some(driver.to_string()),
                ba,
                tau,
            };
            Ok((result, preds))
        })
        .collect::<Result<_, ClassifierError>>()?;
    let (folds, preds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(summarize(folds, preds.into_iter().flatten().collect()))
}

/// Exponent grid k/10 for k = 1..=20.
pub fn default_gamma_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSearch {
    /// (gamma, mean leave-one-driver-out BA)
    pub scores: Vec<(f64, f64)>,
    pub best_gamma: f64,
}

/// Leave-one-driver-out BA of the weighted model for each exponent; the
/// best exponent wins, ties going to the smallest.
pub fn gamma_search(
    cohort: &[LabeledProfile],
    layer_pis: &[f64],
    grid: &[f64],
    omega: f64,
    cfg: &CvConfig,
) -> Result<GammaSearch, ClassifierError> {
    if grid.is_empty() {
        return Err(ClassifierError::BadConfig("empty gamma grid".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let opts = ScoreOptions { ablation: Ablation::Weighted, gamma, layer_pis: layer_pis.to_vec(), omega };
        scores.push((gamma, evaluate_lodo(cohort, &opts, cfg)?.mean_ba));
    }
    let mut order: Vec<&(f64, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let best_gamma = order[0].0;
    Ok(GammaSearch { scores, best_gamma })
}
