use super::{
    build_base_grid, em_run, enumerate_candidates, trimmed_kmeans, BaseGrid, Candidate, EmTrace, GaussianComponent,
    SeverityConfig, SeverityError, SeverityModel, UniformLayer,
};
use crate::seeds;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Result of the candidate search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemrFit {
    pub model: SeverityModel,
    pub trace: EmTrace,
    pub grid: BaseGrid,
    /// Index of the winning candidate in lexicographic enumeration order.
    pub candidate_index: usize,
    pub candidates_run: usize,
    pub candidates_rejected: usize,
}

/// Starting model for one endpoint candidate: bulk from the k-means
/// clusters with mass (1 - alpha)/G each, tail mass alpha split evenly.
pub fn initial_model(
    centers: &[f64],
    sds: &[f64],
    candidate: &Candidate,
    cfg: &SeverityConfig,
    n: usize,
) -> SeverityModel {
    let g = centers.len();
    let layers = candidate.left.len() - 1 + candidate.right.len() - 1;
    let floor = cfg.scale_floor(n);
    let tail_pi = cfg.alpha / layers as f64;
    SeverityModel {
        gaussians: centers
            .iter()
            .zip(sds)
            .map(|(&mean, &sd)| GaussianComponent { mean, sd: sd.max(floor), pi: (1.0 - cfg.alpha) / g as f64 })
            .collect(),
        left_layers: candidate.left.windows(2).map(|w| UniformLayer { lo: w[1], hi: w[0], pi: tail_pi }).collect(),
        right_layers: candidate.right.windows(2).map(|w| UniformLayer { lo: w[0], hi: w[1], pi: tail_pi }).collect(),
        log_lik: f64::NAN,
        n,
        config: cfg.clone(),
    }
}

fn separated(candidate: &Candidate, centers: &[f64], sds: &[f64], delta: f64) -> bool {
    let last = centers.len() - 1;
    candidate.left[0] <= centers[0] - delta * sds[0] && candidate.right[0] >= centers[last] + delta * sds[last]
}

/// Multi-run EM over every admissible endpoint candidate; returns the run
/// with the highest log-likelihood, ties going to the earliest candidate.
pub fn mu_memr(
    data: &[f64],
    g: usize,
    m_left: usize,
    m_right: usize,
    cfg: &SeverityConfig,
    seed: u64,
) -> Result<MemrFit, SeverityError> {
    cfg.validate()?;
    let n = data.len();
    if n < 100 {
        return Err(SeverityError::InvalidConfig(format!("need at least 100 points, got {n}")));
    }
    let mut rng = seeds::rng_for_indexed(seed, "severity/kmeans", &[g as u64]);
    let km = trimmed_kmeans(data, g, cfg.alpha, cfg.restarts, &mut rng)?;
    let grid = build_base_grid(&km.left_tail, &km.right_tail, cfg.q, cfg.p)?;
    let floor = cfg.scale_floor(n);
    let sds: Vec<f64> = km.sds.iter().map(|s| s.max(floor)).collect();
    let candidates: Vec<Candidate> = enumerate_candidates(&grid, m_left, m_right, 12f64.sqrt() * floor)?
        .into_iter()
        .filter(|c| separated(c, &km.centers, &sds, cfg.delta))
        .collect();
    if candidates.is_empty() {
        return Err(SeverityError::NoFeasibleCandidate);
    }
    log::info!("G={g} M-={m_left} M+={m_right}: {} candidates", candidates.len());

    let runs: Vec<Option<(usize, SeverityModel, EmTrace)>> = candidates
        .par_iter()
        .map(|c| {
            let init = initial_model(&km.centers, &sds, c, cfg, n);
            match em_run(data, &init) {
                Ok((model, trace)) if model.check_constraints(n).is_ok() => Some((c.index, model, trace)),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("candidate {} failed: {e}", c.index);
                    None
                }
            }
        })
        .collect();
    let rejected = runs.iter().filter(|r| r.is_none()).count();
    let best =
        runs.into_iter().flatten().max_by(|a, b| a.1.log_lik.total_cmp(&b.1.log_lik).then_with(|| b.0.cmp(&a.0)));
    let (candidate_index, model, trace) = best.ok_or(SeverityError::AllRunsRejected)?;
    Ok(MemrFit { model, trace, grid, candidate_index, candidates_run: candidates.len(), candidates_rejected: rejected })
}

/// Free parameters: 2G bulk parameters, M- + M+ interior endpoints and
/// G + M- + M+ - 1 mixing probabilities.
pub fn parameter_count(g: usize, m_left: usize, m_right: usize) -> usize {
    2 * g + (m_left + m_right) + (g + m_left + m_right - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub g: usize,
    pub m_left: usize,
    pub m_right: usize,
    pub params: usize,
    pub log_lik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
    pub fits: Vec<Option<MemrFit>>,
    pub best_log_lik: Option<usize>,
    pub best_aic: Option<usize>,
    pub best_bic: Option<usize>,
}

fn arg_best(rows: &[SelectionRow], key: impl Fn(&SelectionRow) -> Option<f64>, larger: bool) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter_map(|(i, r)| key(r).map(|v| (i, v)))
        .min_by(|a, b| {
            let ord = a.1.total_cmp(&b.1);
            let ord = if larger { ord.reverse() } else { ord };
            match ord {
                Ordering::Equal => a.0.cmp(&b.0),
                o => o,
            }
        })
        .map(|(i, _)| i)
}

/// Fits one (G, M-, M+) cell. Failures become a row with the error text.
pub fn fit_cell(
    data: &[f64],
    g: usize,
    m_left: usize,
    m_right: usize,
    cfg: &SeverityConfig,
    seed: u64,
) -> (SelectionRow, Option<MemrFit>) {
    let k = parameter_count(g, m_left, m_right);
    let n = data.len() as f64;
    match mu_memr(data, g, m_left, m_right, cfg, seed) {
        Ok(fit) => {
            let ll = fit.model.log_lik;
            let row = SelectionRow {
                g,
                m_left,
                m_right,
                params: k,
                log_lik: Some(ll),
                aic: Some(2.0 * k as f64 - 2.0 * ll),
                bic: Some(k as f64 * n.ln() - 2.0 * ll),
                status: "ok".into(),
            };
            (row, Some(fit))
        }
        Err(e) => {
            log::warn!("cell G={g} M-={m_left} M+={m_right} failed: {e}");
            let row = SelectionRow {
                g,
                m_left,
                m_right,
                params: k,
                log_lik: None,
                aic: None,
                bic: None,
                status: e.to_string(),
            };
            (row, None)
        }
    }
}

impl SelectionTable {
    pub fn from_rows(rows: Vec<SelectionRow>, fits: Vec<Option<MemrFit>>) -> Self {
        Self {
            best_log_lik: arg_best(&rows, |r| r.log_lik, true),
            best_aic: arg_best(&rows, |r| r.aic, false),
            best_bic: arg_best(&rows, |r| r.bic, false),
            rows,
            fits,
        }
    }
}

/// Fits every (G, M-, M+) cell and tabulates log-likelihood, AIC and BIC.
/// Cells that fail are recorded with their error and skipped for the
/// best-of rows.
pub fn model_select(
    data: &[f64],
    g_grid: &[usize],
    m_left_grid: &[usize],
    m_right_grid: &[usize],
    cfg: &SeverityConfig,
    seed: u64,
) -> Result<SelectionTable, SeverityError> {
    if g_grid.is_empty() || m_left_grid.is_empty() || m_right_grid.is_empty() {
        return Err(SeverityError::InvalidConfig("selection grids must be nonempty".into()));
    }
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &g in g_grid {
        for &ml in m_left_grid {
            for &mr in m_right_grid {
                let (row, fit) = fit_cell(data, g, ml, mr, cfg, seed);
                rows.push(row);
                fits.push(fit);
            }
        }
    }
    Ok(SelectionTable::from_rows(rows, fits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = Normal::new(-0.015, 0.005).unwrap();
        let r = Normal::new(0.015, 0.005).unwrap();
        (0..n)
            .map(|i| match i % 20 {
                0 => -0.04 - rng.random_range(0..=16) as f64 * 0.005,
                1 => 0.04 + rng.random_range(0..=16) as f64 * 0.005,
                k if k % 2 == 0 => l.sample(&mut rng),
                _ => r.sample(&mut rng),
            })
            .collect()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(2, 4, 5), 4 + 9 + 10);
        assert_eq!(parameter_count(1, 1, 1), 2 + 2 + 2);
    }

    #[test]
    fn single_layer_fit() {
        let data = sample(2000, 1);
        let cfg = SeverityConfig { alpha: 0.1, q: 4, p: 4, ..Default::default() };
        let fit = mu_memr(&data, 2, 1, 1, &cfg, 7).unwrap();
        assert!(fit.model.check_constraints(data.len()).is_ok());
        assert_eq!(fit.model.left_layers[0].lo, fit.grid.left_min);
        assert_eq!(fit.model.right_layers[0].hi, fit.grid.right_max);
        // brute force over the same candidates agrees on the optimum
        let again = mu_memr(&data, 2, 1, 1, &cfg, 7).unwrap();
        assert_eq!(fit.model, again.model);
        assert_eq!(fit.candidate_index, again.candidate_index);
    }

    #[test]
    fn single_cell_selection() {
        let data = sample(1000, 2);
        let cfg = SeverityConfig { alpha: 0.1, q: 3, p: 3, ..Default::default() };
        let t = model_select(&data, &[2], &[1], &[1], &cfg, 1).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!((t.best_log_lik, t.best_aic, t.best_bic), (Some(0), Some(0), Some(0)));
    }

    #[test]
    fn failed_cells_recorded() {
        let data = sample(1000, 3);
        let cfg = SeverityConfig { alpha: 0.1, q: 2, p: 2, ..Default::default() };
        let t = model_select(&data, &[2], &[1, 3], &[1], &cfg, 1).unwrap();
        assert_eq!(t.rows[1].status, SeverityError::NoFeasibleCandidate.to_string());
        assert_eq!(t.best_bic, Some(0));
    }
}
