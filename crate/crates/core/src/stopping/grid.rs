//! Uniform simplex grid with Freudenthal (Kuhn) simplicial interpolation.
//!
//! Grid points are the compositions `k` of the resolution `M` into `S`
//! nonnegative parts, mapped to beliefs `k / M`. A belief is located in the
//! triangulation through the cumulative coordinates `x(i) = M * sum_{j >= i} pi(j)`,
//! where the grid becomes the integer lattice and the Kuhn triangulation is
//! obtained by sorting the fractional parts.

use crate::error::{Error, Result};

/// One vertex of an interpolation simplex: grid index and barycentric weight.
pub type Vertex = (usize, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    states: usize,
    resolution: usize,
    /// Flattened `len() x states` compositions.
    counts: Vec<u32>,
    /// `ways[r][n]` = number of compositions of `r` into `n` parts.
    ways: Vec<Vec<usize>>,
}

fn composition_table(resolution: usize, states: usize) -> Vec<Vec<usize>> {
    let mut ways = vec![vec![0usize; states + 1]; resolution + 1];
    for row in ways.iter_mut() {
        row[1] = 1;
    }
    for n in 2..=states {
        for r in 0..=resolution {
            ways[r][n] = (0..=r).map(|k| ways[r - k][n - 1]).sum();
        }
    }
    ways
}

impl BeliefGrid {
    pub fn new(states: usize, resolution: usize) -> Result<Self> {
        if states == 0 || resolution == 0 {
            return Err(Error::Domain("grid needs at least one state and resolution >= 1".into()));
        }
        if states > MAX_STATES {
            return Err(Error::Domain(format!("grid supports at most {MAX_STATES} states")));
        }
        let ways = composition_table(resolution, states);
        let n = ways[resolution][states];
        let mut counts = Vec::with_capacity(n * states);
        let mut current = vec![0u32; states];
        enumerate(&mut current, 0, resolution as u32, &mut counts);
        debug_assert_eq!(counts.len(), n * states);
        Ok(Self { states, resolution, counts, ways })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.counts.len() / self.states
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Integer composition of grid point `idx`.
    pub fn counts(&self, idx: usize) -> &[u32] {
        &self.counts[idx * self.states..(idx + 1) * self.states]
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let m = self.resolution as f64;
        self.counts(idx).iter().map(|&k| f64::from(k) / m).collect()
    }

    /// Index of the grid point with composition `k`.
    pub fn rank(&self, k: &[u32]) -> usize {
        debug_assert_eq!(k.len(), self.states);
        let mut rank = 0;
        let mut remaining = self.resolution;
        for (i, &ki) in k.iter().enumerate().take(self.states - 1) {
            let parts = self.states - i - 1;
            for v in 0..ki as usize {
                rank += self.ways[remaining - v][parts];
            }
            remaining -= ki as usize;
        }
        rank
    }

    /// Freudenthal simplex containing `pi`, as (grid index, weight) pairs with
    /// positive weights summing to one. `out` is cleared first.
    pub fn locate(&self, pi: &[f64], out: &mut Vec<Vertex>) {
        let s = self.states;
        debug_assert_eq!(pi.len(), s);
        out.clear();
        if s == 1 {
            out.push((0, 1.0));
            return;
        }
        let m = self.resolution as f64;
        let total: f64 = pi.iter().sum();
        // cumulative coordinates x[i] = M * sum_{j>=i} pi[j] / total, x[0] = M
        let mut base = [0i64; MAX_STATES];
        let mut frac = [0f64; MAX_STATES];
        let mut acc = 0.0;
        for i in (1..s).rev() {
            acc += pi[i].max(0.0);
            let x = (m * acc / total).clamp(0.0, m);
            let fl = x.floor();
            base[i] = fl as i64;
            frac[i] = x - fl;
        }
        base[0] = self.resolution as i64;
        // monotone base (guards against rounding in the cumulative sums)
        for i in 1..s {
            if base[i] > base[i - 1] {
                base[i] = base[i - 1];
                frac[i] = 0.0;
            }
        }
        let mut order = [0usize; MAX_STATES];
        for (k, o) in order.iter_mut().enumerate().take(s - 1) {
            *o = k + 1;
        }
        order[..s - 1].sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(a.cmp(&b)));

        let mut vertex = base;
        let mut comp = [0u32; MAX_STATES];
        for step in 0..s {
            let weight = if step == 0 {
                1.0 - frac[order[0]]
            } else if step < s - 1 {
                frac[order[step - 1]] - frac[order[step]]
            } else {
                frac[order[s - 2]]
            };
            if step > 0 {
                vertex[order[step - 1]] += 1;
            }
            if weight <= 0.0 {
                continue;
            }
            for i in 0..s {
                let next = if i + 1 < s { vertex[i + 1] } else { 0 };
                comp[i] = (vertex[i] - next) as u32;
            }
            out.push((self.rank(&comp[..s]), weight));
        }
    }

    /// Piecewise-linear interpolation of grid `values` at `pi`.
    pub fn interpolate(&self, values: &[f64], pi: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.states);
        self.locate(pi, &mut buf);
        buf.iter().map(|&(i, w)| w * values[i]).sum()
    }
}

/// Largest supported state count for the grid.
pub const MAX_STATES: usize = 16;

fn enumerate(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<u32>) {
    let s = current.len();
    if pos == s - 1 {
        current[pos] = remaining;
        out.extend_from_slice(current);
        return;
    }
    for v in 0..=remaining {
        current[pos] = v;
        enumerate(current, pos + 1, remaining - v, out);
    }
}

/// Binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn point_count_and_ranks() {
        for (s, m) in [(1, 5), (2, 7), (3, 10), (4, 6), (5, 4)] {
            let g = BeliefGrid::new(s, m).unwrap();
            assert_eq!(g.len(), binomial(m + s - 1, s - 1));
            for idx in 0..g.len() {
                assert_eq!(g.rank(g.counts(idx)), idx);
                let p = g.point(idx);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_points_interpolate_exactly() {
        let g = BeliefGrid::new(3, 8).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        for idx in 0..g.len() {
            let v = g.interpolate(&values, &g.point(idx));
            assert!((v - values[idx]).abs() < 1e-12);
        }
    }

    fn arb_belief(s: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, s).prop_filter_map("positive mass", |w| {
            let t: f64 = w.iter().sum();
            (t > 1e-9).then(|| w.iter().map(|x| x / t).collect())
        })
    }

    proptest! {
        #[test]
        fn reproduces_linear_functions(pi in arb_belief(4), m in 1usize..12) {
            let g = BeliefGrid::new(4, m).unwrap();
            let coef = [3.0, -1.0, 0.5, 2.0];
            let values: Vec<f64> = (0..g.len())
                .map(|i| g.point(i).iter().zip(coef).map(|(a, b)| a * b).sum())
                .collect();
            let exact: f64 = pi.iter().zip(coef).map(|(a, b)| a * b).sum();
            prop_assert!((g.interpolate(&values, &pi) - exact).abs() < 1e-10);
        }

        #[test]
        fn weights_form_a_convex_combination(pi in arb_belief(3), m in 1usize..30) {
            let g = BeliefGrid::new(3, m).unwrap();
            let mut buf = Vec::new();
            g.locate(&pi, &mut buf);
            prop_assert!(!buf.is_empty() && buf.len() <= 3);
            prop_assert!(buf.iter().all(|&(i, w)| i < g.len() && w > 0.0));
            prop_assert!((buf.iter().map(|v| v.1).sum::<f64>() - 1.0).abs() < 1e-12);
            // barycentre reproduces the point
            for (k, &target) in pi.iter().enumerate() {
                let x: f64 = buf.iter().map(|&(i, w)| w * g.point(i)[k]).sum();
                prop_assert!((x - target).abs() < 1e-10);
            }
        }
    }
}
