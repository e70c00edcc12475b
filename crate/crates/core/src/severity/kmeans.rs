use super::SeverityError;
use rand::seq::index::sample;
use rand::Rng;

/// Robust bulk initialization from trimmed k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Ascending centers.
    pub centers: Vec<f64>,
    /// Population sds of the untrimmed members of each cluster.
    pub sds: Vec<f64>,
    /// Trimmed points below zero, ascending.
    pub left_tail: Vec<f64>,
    /// Trimmed points above zero, ascending.
    pub right_tail: Vec<f64>,
    /// Trimmed within-cluster sum of squares.
    pub sse: f64,
}

/// Points trimmed per step for a sample of size `n`.
pub fn trimmed_count(alpha: f64, n: usize) -> usize {
    (alpha * n as f64 - 1e-9).ceil().max(0.0) as usize
}

struct Pass {
    centers: Vec<f64>,
    sds: Vec<f64>,
    trimmed: Vec<bool>,
    sse: f64,
}

fn nearest(centers: &[f64], x: f64) -> (usize, f64) {
    centers.iter().enumerate().map(|(k, c)| (k, (x - c).abs())).fold((0, f64::INFINITY), |best, cur| {
        if cur.1 < best.1 {
            cur
        } else {
            best
        }
    })
}

fn lloyd(values: &[f64], mut centers: Vec<f64>, h: usize) -> Option<Pass> {
    let n = values.len();
    let g = centers.len();
    let mut assign = vec![0usize; n];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut trimmed = vec![false; n];
    for _ in 0..200 {
        order.clear();
        for (i, &x) in values.iter().enumerate() {
            let (k, d) = nearest(&centers, x);
            assign[i] = k;
            order.push((d, i));
        }
        trimmed.iter_mut().for_each(|t| *t = false);
        if h > 0 {
            // farthest h points; ties broken by lower index
            order.select_nth_unstable_by(h - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in &order[..h] {
                trimmed[i] = true;
            }
        }
        let mut sums = vec![0.0; g];
        let mut counts = vec![0usize; g];
        for i in 0..n {
            if !trimmed[i] {
                sums[assign[i]] += values[i];
                counts[assign[i]] += 1;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        let next: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
        let done = next == centers;
        centers = next;
        if done {
            break;
        }
    }
    let mut ss = vec![0.0; g];
    let mut counts = vec![0usize; g];
    for i in 0..n {
        if !trimmed[i] {
            let (k, d) = nearest(&centers, values[i]);
            ss[k] += d * d;
            counts[k] += 1;
        }
    }
    if counts.contains(&0) {
        return None;
    }
    let sds: Vec<f64> = ss.iter().zip(&counts).map(|(s, c)| (s / *c as f64).sqrt()).collect();
    if sds.iter().any(|s| !(*s > 0.0)) {
        return None;
    }
    Some(Pass { centers, sds, trimmed, sse: ss.iter().sum() })
}

/// Trimmed k-means in one dimension: each Lloyd step discards the
/// ceil(alpha n) points farthest from their nearest center before updating.
/// Keeps the best of `restarts` random starts by trimmed SSE.
pub fn trimmed_kmeans<R: Rng>(
    values: &[f64],
    g: usize,
    alpha: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansFit, SeverityError> {
    let n = values.len();
    if g == 0 || !(alpha > 0.0 && alpha < 1.0) || restarts == 0 {
        return Err(SeverityError::InvalidConfig("trimmed k-means needs G >= 1, alpha in (0,1), restarts >= 1".into()));
    }
    let h = trimmed_count(alpha, n);
    if n <= h + g {
        return Err(SeverityError::InvalidConfig(format!("{n} points cannot support {g} clusters after trimming {h}")));
    }
    let mut best: Option<Pass> = None;
    for _ in 0..restarts {
        let mut init: Vec<f64> = sample(rng, n, g).into_iter().map(|i| values[i]).collect();
        init.sort_by(f64::total_cmp);
        if let Some(pass) = lloyd(values, init, h) {
            if best.as_ref().is_none_or(|b| pass.sse < b.sse) {
                best = Some(pass);
            }
        }
    }
    let best = best.ok_or(SeverityError::DegenerateClusters)?;

    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| best.centers[a].total_cmp(&best.centers[b]));
    let mut left_tail: Vec<f64> = Vec::new();
    let mut right_tail: Vec<f64> = Vec::new();
    for (i, &x) in values.iter().enumerate() {
        if best.trimmed[i] {
            if x < 0.0 {
                left_tail.push(x);
            } else if x > 0.0 {
                right_tail.push(x);
            }
        }
    }
    left_tail.sort_by(f64::total_cmp);
    right_tail.sort_by(f64::total_cmp);
    if left_tail.is_empty() {
        return Err(SeverityError::NoTailPoints("left"));
    }
    if right_tail.is_empty() {
        return Err(SeverityError::NoTailPoints("right"));
    }
    Ok(KMeansFit {
        centers: order.iter().map(|&k| best.centers[k]).collect(),
        sds: order.iter().map(|&k| best.sds[k]).collect(),
        left_tail,
        right_tail,
        sse: best.sse,
    })
}
