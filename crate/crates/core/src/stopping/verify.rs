//! Structural checks on a solved problem: nested stopping sets, a single
//! switch along lines through the simplex corners, and monotone values.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::grid::BeliefGrid;
use super::solve::GridSolution;
use crate::action::Action;
use crate::hmm::LineEnd;

/// Slack allowed in the value comparisons.
pub const MONOTONE_TOL: f64 = 1e-9;

/// Examples kept per violation kind.
const MAX_EXAMPLES: usize = 100;

/// Per-`l` stopping sets as grid masks, `masks[l - 1]`.
pub fn extract_stopping_sets(solution: &GridSolution) -> Vec<Vec<bool>> {
    (1..=solution.stops()).map(|l| solution.stop_set(l)).collect()
}

/// Grid points in `S^{l-1}` but not in `S^l`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NestingReport {
    /// `(l, grid index)` pairs.
    pub violations: Vec<(usize, usize)>,
}

impl NestingReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_nested(solution: &GridSolution) -> NestingReport {
    let mut violations = Vec::new();
    for l in 2..=solution.stops() {
        let (lo, hi) = (solution.actions(l - 1), solution.actions(l));
        for (p, (a, b)) in lo.iter().zip(hi).enumerate() {
            if a.is_stop() && !b.is_stop() {
                violations.push((l, p));
            }
        }
    }
    NestingReport { violations }
}

/// A stop immediately followed by a continue when walking a line toward the
/// MLR-larger end. Both cells are grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineViolation {
    pub l: usize,
    /// Corner the line passes through.
    pub corner: LineEnd,
    pub stop_cell: usize,
    pub continue_cell: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LineReport {
    pub first_lines: usize,
    pub last_lines: usize,
    pub violations: Vec<LineViolation>,
}

impl LineReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn holds_on(&self, corner: LineEnd) -> bool {
        self.violations.iter().all(|v| v.corner != corner)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Grid lines through a corner. Each line is listed from the MLR-smallest
/// point to the MLR-largest one: toward `e_1` for `First`, away from `e_S`
/// for `Last`. The corner itself is included.
pub fn grid_lines(grid: &BeliefGrid, corner: LineEnd) -> Vec<Vec<usize>> {
    let s = grid.states();
    if s < 2 {
        return Vec::new();
    }
    let m = grid.resolution() as u32;
    let mut corner_counts = vec![0u32; s];
    let (face, corner_idx) = match corner {
        LineEnd::First => (1..s, 0),
        LineEnd::Last => (0..s - 1, s - 1),
    };
    corner_counts[corner_idx] = m;
    let corner_point = grid.rank(&corner_counts);

    let mut lines: BTreeMap<Vec<u32>, Vec<(u32, usize)>> = BTreeMap::new();
    for idx in 0..grid.len() {
        let k = &grid.counts(idx)[face.clone()];
        let step = k.iter().fold(0, |g, &x| gcd(g, x));
        if step == 0 {
            continue;
        }
        let dir: Vec<u32> = k.iter().map(|x| x / step).collect();
        lines.entry(dir).or_default().push((step, idx));
    }
    lines
        .into_values()
        .map(|mut pts| {
            match corner {
                LineEnd::First => {
                    pts.sort_by_key(|p| std::cmp::Reverse(p.0));
                    let mut line: Vec<usize> = pts.into_iter().map(|p| p.1).collect();
                    line.push(corner_point);
                    line
                }
                LineEnd::Last => {
                    pts.sort_by_key(|p| p.0);
                    let mut line = vec![corner_point];
                    line.extend(pts.into_iter().map(|p| p.1));
                    line
                }
            }
        })
        .collect()
}

/// Along every grid line through `e_1` and through `e_S`, walking toward the
/// MLR-larger end, the action may switch at most once and only from continue to stop.
pub fn verify_threshold_on_lines(solution: &GridSolution) -> LineReport {
    let grid = solution.grid();
    let mut report = LineReport::default();
    for corner in [LineEnd::First, LineEnd::Last] {
        let lines = grid_lines(grid, corner);
        match corner {
            LineEnd::First => report.first_lines = lines.len(),
            LineEnd::Last => report.last_lines = lines.len(),
        }
        for l in 1..=solution.stops() {
            let actions = solution.actions(l);
            for line in &lines {
                for pair in line.windows(2) {
                    if actions[pair[0]] == Action::Stop && actions[pair[1]] == Action::Continue {
                        report.violations.push(LineViolation {
                            l,
                            corner,
                            stop_cell: pair[0],
                            continue_cell: pair[1],
                        });
                    }
                }
            }
        }
    }
    report
}

/// `k1 >=_r k2` on integer compositions: `k1(j) k2(i) <= k2(j) k1(i)` for `i < j`.
pub fn mlr_geq_counts(k1: &[u32], k2: &[u32]) -> bool {
    let s = k1.len();
    (0..s).all(|i| {
        (i + 1..s).all(|j| u64::from(k1[j]) * u64::from(k2[i]) <= u64::from(k2[j]) * u64::from(k1[i]))
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonotoneReport {
    /// Ordered grid pairs `(hi, lo)` with `hi >=_r lo`, `hi != lo`.
    pub comparable_pairs: usize,
    pub value_violations: usize,
    /// `(l, hi, lo, V(lo, l) - V(hi, l))`.
    pub value_examples: Vec<(usize, usize, usize, f64)>,
    pub w_violations: usize,
    /// `(l, point, W(point, l) - W(point, l - 1))`.
    pub w_examples: Vec<(usize, usize, f64)>,
    /// Largest `V(lo, l) - V(hi, l)` over comparable pairs.
    pub worst_value_gap: f64,
    /// Largest `W(p, l) - W(p, l - 1)`.
    pub worst_w_gap: f64,
}

impl MonotoneReport {
    pub fn holds(&self) -> bool {
        self.value_violations == 0 && self.w_violations == 0
    }
}

/// `V(., l)` is MLR-increasing over comparable grid pairs and `W(p, l)`
/// is nonincreasing in `l`, both within [`MONOTONE_TOL`].
/// Comparable pairs, violations, examples and worst gap for one `hi` point.
type RowTally = (usize, usize, Vec<(usize, usize, usize, f64)>, f64);

pub fn verify_monotone_value(solution: &GridSolution) -> MonotoneReport {
    let grid = solution.grid();
    let n = grid.len();
    let big_l = solution.stops();

    let per_row: Vec<RowTally> = (0..n)
        .into_par_iter()
        .map(|hi| {
            let khi = grid.counts(hi);
            let (mut pairs, mut bad, mut examples, mut worst) = (0, 0, Vec::new(), f64::NEG_INFINITY);
            for lo in 0..n {
                if lo == hi || !mlr_geq_counts(khi, grid.counts(lo)) {
                    continue;
                }
                pairs += 1;
                for l in 1..=big_l {
                    let v = solution.values(l);
                    let gap = v[lo] - v[hi];
                    worst = worst.max(gap);
                    if gap > MONOTONE_TOL {
                        bad += 1;
                        if examples.len() < MAX_EXAMPLES {
                            examples.push((l, hi, lo, gap));
                        }
                    }
                }
            }
            (pairs, bad, examples, worst)
        })
        .collect();

    let mut report = MonotoneReport {
        worst_value_gap: f64::NEG_INFINITY,
        worst_w_gap: f64::NEG_INFINITY,
        ..MonotoneReport::default()
    };
    for (pairs, bad, examples, worst) in per_row {
        report.comparable_pairs += pairs;
        report.value_violations += bad;
        report.worst_value_gap = report.worst_value_gap.max(worst);
        let room = MAX_EXAMPLES - report.value_examples.len();
        report.value_examples.extend(examples.into_iter().take(room));
    }

    for l in 2..=big_l {
        let (w_hi, w_lo) = (solution.w(l), solution.w(l - 1));
        for p in 0..n {
            let gap = w_hi[p] - w_lo[p];
            report.worst_w_gap = report.worst_w_gap.max(gap);
            if gap > MONOTONE_TOL {
                report.w_violations += 1;
                if report.w_examples.len() < MAX_EXAMPLES {
                    report.w_examples.push((l, p, gap));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_cover_the_grid() {
        let grid = BeliefGrid::new(3, 6).unwrap();
        for (corner, c) in [(LineEnd::First, vec![6, 0, 0]), (LineEnd::Last, vec![0, 0, 6])] {
            let corner_idx = grid.rank(&c);
            let lines = grid_lines(&grid, corner);
            let mut seen = vec![0usize; grid.len()];
            for line in &lines {
                line.iter().for_each(|&p| seen[p] += 1);
            }
            for (p, &count) in seen.iter().enumerate() {
                let expected = if p == corner_idx { lines.len() } else { 1 };
                assert_eq!(count, expected, "point {p}");
            }
        }
    }

    #[test]
    fn first_corner_lines_move_toward_e1() {
        let grid = BeliefGrid::new(3, 4).unwrap();
        for line in grid_lines(&grid, LineEnd::First) {
            for pair in line.windows(2) {
                assert!(grid.point(pair[1])[0] > grid.point(pair[0])[0]);
            }
        }
        for line in grid_lines(&grid, LineEnd::Last) {
            for pair in line.windows(2) {
                assert!(grid.point(pair[1])[2] < grid.point(pair[0])[2]);
            }
        }
    }

    #[test]
    fn count_order_matches_float_order() {
        let grid = BeliefGrid::new(3, 5).unwrap();
        for a in 0..grid.len() {
            for b in 0..grid.len() {
                assert_eq!(
                    mlr_geq_counts(grid.counts(a), grid.counts(b)),
                    crate::hmm::mlr_geq(&grid.point(a), &grid.point(b)),
                    "{:?} vs {:?}",
                    grid.counts(a),
                    grid.counts(b)
                );
            }
        }
    }
}
