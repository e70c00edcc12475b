use super::SeverityError;
use itertools::Itertools;
use serde::{Deserialize, Serialize};

/// Candidate endpoints for the tail layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseGrid {
    /// Ascending, in (left_min, left_max].
    pub left_points: Vec<f64>,
    /// Ascending, in [right_min, right_max).
    pub right_points: Vec<f64>,
    pub left_min: f64,
    pub left_max: f64,
    pub right_min: f64,
    pub right_max: f64,
}

/// Observed value nearest to `target`; ties go to the smaller value.
fn snap(sorted: &[f64], target: f64) -> f64 {
    let i = sorted.partition_point(|v| *v < target);
    match (i.checked_sub(1).map(|j| sorted[j]), sorted.get(i)) {
        (Some(a), Some(&b)) => {
            if target - a <= b - target {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(&b)) => b,
        (None, None) => unreachable!("snap on empty set"),
    }
}

fn snapped_points(sorted: &[f64], targets: impl Iterator<Item = f64>, exclude: f64, side: &str) -> Vec<f64> {
    let mut points: Vec<f64> = targets.map(|t| snap(sorted, t)).filter(|v| *v != exclude).collect();
    let requested = points.len();
    points.sort_by(f64::total_cmp);
    points.dedup();
    if points.len() < requested {
        log::warn!("{side} grid: {requested} split points collapsed to {} after snapping", points.len());
    }
    points
}

/// Splits each tail range into equal pieces and snaps the split points to
/// the nearest observed tail values. Left points are c_min + kD for
/// k = 1..=q, right points c_min + kD for k = 0..p.
pub fn build_base_grid(left_tail: &[f64], right_tail: &[f64], q: usize, p: usize) -> Result<BaseGrid, SeverityError> {
    if q == 0 || p == 0 {
        return Err(SeverityError::InvalidConfig("q and p must be at least 1".into()));
    }
    if left_tail.is_empty() {
        return Err(SeverityError::NoTailPoints("left"));
    }
    if right_tail.is_empty() {
        return Err(SeverityError::NoTailPoints("right"));
    }
    let mut left = left_tail.to_vec();
    left.sort_by(f64::total_cmp);
    let mut right = right_tail.to_vec();
    right.sort_by(f64::total_cmp);
    let (l_min, l_max) = (left[0], left[left.len() - 1]);
    let (r_min, r_max) = (right[0], right[right.len() - 1]);
    let dl = (l_max - l_min) / q as f64;
    let dr = (r_max - r_min) / p as f64;
    let left_points = snapped_points(&left, (1..=q).map(|k| l_min + k as f64 * dl), l_min, "left");
    let right_points = snapped_points(&right, (0..p).map(|k| r_min + k as f64 * dr), r_max, "right");
    if left_points.is_empty() {
        return Err(SeverityError::NoTailPoints("left"));
    }
    if right_points.is_empty() {
        return Err(SeverityError::NoTailPoints("right"));
    }
    Ok(BaseGrid { left_points, right_points, left_min: l_min, left_max: l_max, right_min: r_min, right_max: r_max })
}

/// One endpoint configuration. `left` runs from the bulk outward
/// (u1 > u2 > ... > left_min), `right` likewise (u1 < u2 < ... < right_max).
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

fn wide_enough(points: &[f64], min_width: f64) -> bool {
    points.windows(2).all(|w| (w[1] - w[0]).abs() >= min_width)
}

/// All admissible endpoint configurations in lexicographic order of the
/// chosen grid indices, left choice major. Width-violating combinations are
/// skipped but still consume an index.
pub fn enumerate_candidates(
    grid: &BaseGrid,
    m_left: usize,
    m_right: usize,
    min_width: f64,
) -> Result<Vec<Candidate>, SeverityError> {
    if m_left == 0 || m_right == 0 {
        return Err(SeverityError::InvalidConfig("each tail needs at least one layer".into()));
    }
    if m_left > grid.left_points.len() || m_right > grid.right_points.len() {
        return Err(SeverityError::NoFeasibleCandidate);
    }
    let lefts: Vec<Vec<f64>> = grid
        .left_points
        .iter()
        .copied()
        .combinations(m_left)
        .map(|chosen| {
            // chosen ascends; outward order is descending, then the pinned minimum
            let mut ends: Vec<f64> = chosen.into_iter().rev().collect();
            ends.push(grid.left_min);
            ends
        })
        .collect();
    let rights: Vec<Vec<f64>> = grid
        .right_points
        .iter()
        .copied()
        .combinations(m_right)
        .map(|mut ends| {
            ends.push(grid.right_max);
            ends
        })
        .collect();
    let mut out = Vec::new();
    for (li, l) in lefts.iter().enumerate() {
        if !wide_enough(l, min_width) {
            continue;
        }
        for (ri, r) in rights.iter().enumerate() {
            if wide_enough(r, min_width) {
                out.push(Candidate { index: li * rights.len() + ri, left: l.clone(), right: r.clone() });
            }
        }
    }
    if out.is_empty() {
        return Err(SeverityError::NoFeasibleCandidate);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_grid_tail() {
        let g = build_base_grid(&[-10.0, -8.0, -6.0, -4.0, -2.0], &[1.0, 2.0], 4, 1).unwrap();
        assert_eq!(g.left_points, vec![-8.0, -6.0, -4.0, -2.0]);
        assert_eq!(g.right_points, vec![1.0]);
        assert_eq!((g.left_min, g.left_max, g.right_min, g.right_max), (-10.0, -2.0, 1.0, 2.0));
    }

    #[test]
    fn snapping_collapses_duplicates() {
        // split points -8.4, -6.8, -5.2, -3.6, -2.0 snap to -8, -6, -6, -4, -2
        let g = build_base_grid(&[-10.0, -8.0, -6.0, -4.0, -2.0], &[1.0, 2.0], 5, 1).unwrap();
        assert_eq!(g.left_points, vec![-8.0, -6.0, -4.0, -2.0]);
        assert!(g.left_points.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_split_point() {
        let g = build_base_grid(&[-9.0, -7.1, -5.0, -1.0], &[0.5, 0.9, 1.5, 3.0], 1, 1).unwrap();
        assert_eq!(g.left_points, vec![-1.0]);
        assert_eq!(g.right_points, vec![0.5]);
        let g = build_base_grid(&[-9.0, -1.0], &[0.5, 0.9, 1.5, 3.0], 1, 2).unwrap();
        // right split at 0.5 and 1.75 -> 1.5
        assert_eq!(g.right_points, vec![0.5, 1.5]);
        assert_eq!(g.left_points, vec![-1.0]);
    }

    #[test]
    fn more_points_than_values() {
        let g = build_base_grid(&[-3.0, -2.0], &[1.0, 1.1, 4.0], 3, 10).unwrap();
        assert_eq!(g.right_points, vec![1.0, 1.1]);
        assert_eq!(g.left_points, vec![-2.0]);
    }

    #[test]
    fn candidate_counts_and_order() {
        let g = BaseGrid {
            left_points: vec![-3.0, -2.0, -1.0],
            right_points: vec![1.0, 2.0],
            left_min: -4.0,
            left_max: -1.0,
            right_min: 1.0,
            right_max: 3.0,
        };
        let c = enumerate_candidates(&g, 2, 1, 0.1).unwrap();
        assert_eq!(c.len(), 3 * 2);
        assert_eq!(c[0].left, vec![-2.0, -3.0, -4.0]);
        assert_eq!(c[0].right, vec![1.0, 3.0]);
        assert_eq!(c[1].right, vec![2.0, 3.0]);
        assert_eq!(c[5].left, vec![-1.0, -2.0, -4.0]);
        assert!(c.windows(2).all(|w| w[0].index < w[1].index));
    }

    #[test]
    fn narrow_gaps_skipped() {
        let g = BaseGrid {
            left_points: vec![-3.0, -2.95, -1.0],
            right_points: vec![1.0],
            left_min: -4.0,
            left_max: -1.0,
            right_min: 1.0,
            right_max: 3.0,
        };
        let c = enumerate_candidates(&g, 2, 1, 0.1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].index, 1);
        assert!(matches!(enumerate_candidates(&g, 2, 1, 5.0), Err(SeverityError::NoFeasibleCandidate)));
    }

    #[test]
    fn uah_scale_count() {
        let g = BaseGrid {
            left_points: (1..=12).map(|k| -13.0 + k as f64).collect(),
            right_points: (0..10).map(|k| 1.0 + k as f64).collect(),
            left_min: -13.0,
            left_max: -1.0,
            right_min: 1.0,
            right_max: 11.0,
        };
        assert_eq!(enumerate_candidates(&g, 4, 5, 1e-9).unwrap().len(), 495 * 252);
    }
}
