use std::io::Write;

use rayon::prelude::*;

use super::grid::{BeliefGrid, Vertex};
use super::problem::{check_assumptions, truncate_observations, AssumptionReport, StopProblem};
use crate::action::Action;
use crate::error::{Error, Result};

/// Starting point of value iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialValue {
    /// `V_0(pi, l) = pi' sum_{j<l} rho^j P^j r`: the value of stopping at every
    /// one of the next `l` epochs.
    #[default]
    Greedy,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub mass_tol: f64,
    pub initial: InitialValue,
    /// Allow problems with five or more states.
    pub force: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 2000, mass_tol: 1e-10, initial: InitialValue::Greedy, force: false }
    }
}

/// Largest state count solved without `force`.
pub const MAX_DP_STATES: usize = 4;

/// Grid resolution used when none is given.
pub fn default_resolution(states: usize) -> usize {
    match states {
        0..=3 => 100,
        4 => 30,
        _ => 12,
    }
}

/// Row-compressed stochastic operator: `(K v)(p) = sum_y sigma(p, y) v(T(p, y))`
/// with `v(T(p, y))` replaced by its simplex interpolation.
#[derive(Debug, Clone, PartialEq)]
struct Operator {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl Operator {
    fn build(problem: &StopProblem, grid: &BeliefGrid, mass_tol: f64) -> Self {
        let model = problem.model();
        let table = truncate_observations(model, mass_tol);
        let b = &table.likelihood;
        let s = grid.states();
        let rows: Vec<Vec<Vertex>> = (0..grid.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; s], vec![0.0; s], Vec::with_capacity(s)),
                |(pred, post, simplex), idx| {
                    let point = grid.point(idx);
                    model.transition().tr_mul_vec_into(&point, pred);
                    let mut row: Vec<Vertex> = Vec::new();
                    for y in 0..=table.y_max {
                        let mut sigma = 0.0;
                        for i in 0..s {
                            post[i] = b[(i, y)] * pred[i];
                            sigma += post[i];
                        }
                        if sigma <= f64::MIN_POSITIVE {
                            continue;
                        }
                        post.iter_mut().for_each(|x| *x /= sigma);
                        grid.locate(post, simplex);
                        row.extend(simplex.iter().map(|&(j, w)| (j, w * sigma)));
                    }
                    row.sort_by_key(|v| v.0);
                    let mut merged: Vec<Vertex> = Vec::with_capacity(row.len());
                    for (j, w) in row {
                        match merged.last_mut() {
                            Some(last) if last.0 == j => last.1 += w,
                            _ => merged.push((j, w)),
                        }
                    }
                    merged
                },
            )
            .collect();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        for row in rows {
            for (j, w) in row {
                cols.push(j as u32);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols, weights }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let range = self.offsets[p]..self.offsets[p + 1];
            *o = self.cols[range.clone()]
                .iter()
                .zip(&self.weights[range])
                .map(|(&j, &w)| w * v[j as usize])
                .sum();
        });
    }
}

/// Value functions, Q tables and policy of a solved problem on a belief grid.
#[derive(Debug, Clone)]
pub struct GridSolution {
    grid: BeliefGrid,
    stops: usize,
    discount: f64,
    /// `values[l]` for `l = 0..=L`; `values[0]` is identically zero.
    values: Vec<Vec<f64>>,
    /// `q_stop[l - 1]`, `q_continue[l - 1]`, `actions[l - 1]` for `l = 1..=L`.
    q_stop: Vec<Vec<f64>>,
    q_continue: Vec<Vec<f64>>,
    actions: Vec<Vec<Action>>,
    iterations: usize,
    residuals: Vec<f64>,
    converged: bool,
    assumptions: AssumptionReport,
}

/// Runs value iteration on `grid` until the sup-norm change drops below `config.tol`.
pub fn value_iteration(problem: &StopProblem, grid: BeliefGrid, config: &SolverConfig) -> Result<GridSolution> {
    let s = problem.states();
    if grid.states() != s {
        return Err(Error::Dimension { expected: s, got: grid.states() });
    }
    if s > MAX_DP_STATES && !config.force {
        return Err(Error::TooManyStates { states: s });
    }
    let assumptions = check_assumptions(problem);
    let big_l = problem.stops();
    let rho = problem.discount();
    let n = grid.len();
    let op = Operator::build(problem, &grid, config.mass_tol);

    let points: Vec<Vec<f64>> = (0..n).map(|i| grid.point(i)).collect();
    let dot = |c: &[f64]| -> Vec<f64> {
        points.iter().map(|p| p.iter().zip(c).map(|(a, b)| a * b).sum()).collect()
    };
    let stop_reward: Vec<Vec<f64>> = (1..=big_l).map(|l| dot(problem.reward(l))).collect();

    let mut values = vec![vec![0.0; n]; big_l + 1];
    if config.initial == InitialValue::Greedy {
        // c_l = r_l + rho P c_{l-1}
        let p = problem.model().transition();
        let mut c = vec![0.0; s];
        for (l, v) in values.iter_mut().enumerate().skip(1) {
            let pc = p.mul_vec(&c);
            c = problem.reward(l).iter().zip(&pc).map(|(r, x)| r + rho * x).collect();
            *v = dot(&c);
        }
    }

    let mut q_stop = vec![vec![0.0; n]; big_l];
    let mut q_continue = vec![vec![0.0; n]; big_l];
    let mut actions = vec![vec![Action::Continue; n]; big_l];
    let mut expected = vec![vec![0.0; n]; big_l + 1];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        for l in 1..=big_l {
            op.apply(&values[l], &mut expected[l]);
        }
        let mut residual = 0.0f64;
        for l in 1..=big_l {
            let (qs, qc, act) = (&mut q_stop[l - 1], &mut q_continue[l - 1], &mut actions[l - 1]);
            let v = &mut values[l];
            for p in 0..n {
                qs[p] = stop_reward[l - 1][p] + rho * expected[l - 1][p];
                qc[p] = rho * expected[l][p];
                let (next, a) = if qs[p] >= qc[p] { (qs[p], Action::Stop) } else { (qc[p], Action::Continue) };
                residual = residual.max((next - v[p]).abs());
                v[p] = next;
                act[p] = a;
            }
        }
        iterations += 1;
        residuals.push(residual);
        if residual < config.tol {
            converged = true;
            break;
        }
    }

    Ok(GridSolution {
        grid,
        stops: big_l,
        discount: rho,
        values,
        q_stop,
        q_continue,
        actions,
        iterations,
        residuals,
        converged,
        assumptions,
    })
}

/// Solves on a fresh grid of the given resolution (default per state count).
pub fn solve(problem: &StopProblem, resolution: Option<usize>, config: &SolverConfig) -> Result<GridSolution> {
    let s = problem.states();
    if s > MAX_DP_STATES && !config.force {
        return Err(Error::TooManyStates { states: s });
    }
    let grid = BeliefGrid::new(s, resolution.unwrap_or_else(|| default_resolution(s)))?;
    value_iteration(problem, grid, config)
}

impl GridSolution {
    pub fn grid(&self) -> &BeliefGrid {
        &self.grid
    }

    pub fn stops(&self) -> usize {
        self.stops
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Final sup-norm change.
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Sup-norm change after every iteration.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn assumptions(&self) -> &AssumptionReport {
        &self.assumptions
    }

    /// `V(., l)` over the grid, `0 <= l <= L`.
    pub fn values(&self, l: usize) -> &[f64] {
        &self.values[l]
    }

    pub fn q_stop(&self, l: usize) -> &[f64] {
        &self.q_stop[l - 1]
    }

    pub fn q_continue(&self, l: usize) -> &[f64] {
        &self.q_continue[l - 1]
    }

    pub fn actions(&self, l: usize) -> &[Action] {
        &self.actions[l - 1]
    }

    /// Mutable policy table, for perturbation experiments.
    pub fn actions_mut(&mut self, l: usize) -> &mut [Action] {
        &mut self.actions[l - 1]
    }

    /// `W(p, l) = V(p, l) - V(p, l - 1)` over the grid.
    pub fn w(&self, l: usize) -> Vec<f64> {
        self.values[l].iter().zip(&self.values[l - 1]).map(|(a, b)| a - b).collect()
    }

    /// Stopping set `S^l` as a grid mask.
    pub fn stop_set(&self, l: usize) -> Vec<bool> {
        self.actions(l).iter().map(|a| a.is_stop()).collect()
    }

    pub fn value_at(&self, l: usize, pi: &[f64]) -> f64 {
        self.grid.interpolate(&self.values[l], pi)
    }

    /// Interpolated `(Q_stop, Q_continue)` at an arbitrary belief.
    pub fn q_at(&self, l: usize, pi: &[f64]) -> (f64, f64) {
        let mut simplex = Vec::with_capacity(self.grid.states());
        self.grid.locate(pi, &mut simplex);
        simplex.iter().fold((0.0, 0.0), |(a, b), &(i, w)| {
            (a + w * self.q_stop[l - 1][i], b + w * self.q_continue[l - 1][i])
        })
    }

    /// Action at an arbitrary belief; ties go to stopping.
    pub fn action_at(&self, l: usize, pi: &[f64]) -> Action {
        let (qs, qc) = self.q_at(l, pi);
        if qs >= qc {
            Action::Stop
        } else {
            Action::Continue
        }
    }

    /// Writes one row per `(l, grid point)`: `l, pi_1..pi_S, V, Q_stop, Q_continue, action`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let s = self.grid.states();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["l".to_string()];
        header.extend((1..=s).map(|i| format!("pi_{i}")));
        header.extend(["V", "Q_stop", "Q_continue", "action"].map(String::from));
        w.write_record(&header)?;
        for l in 1..=self.stops {
            for p in 0..self.grid.len() {
                let mut rec = vec![l.to_string()];
                rec.extend(self.grid.point(p).iter().map(f64::to_string));
                rec.push(self.values[l][p].to_string());
                rec.push(self.q_stop[l - 1][p].to_string());
                rec.push(self.q_continue[l - 1][p].to_string());
                rec.push(self.actions[l - 1][p].code().to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the stopping-set mask for `l`: `pi_1..pi_S, stop`.
    pub fn write_stop_set_csv<W: Write>(&self, l: usize, out: W) -> Result<()> {
        let s = self.grid.states();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=s).map(|i| format!("pi_{i}")).collect();
        header.push("stop".into());
        w.write_record(&header)?;
        for (p, a) in self.actions(l).iter().enumerate() {
            let mut rec: Vec<String> = self.grid.point(p).iter().map(f64::to_string).collect();
            rec.push(u8::from(a.is_stop()).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::HmmModel;

    fn two_state(rho: f64) -> StopProblem {
        let m = HmmModel::poisson(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![0.5, 0.5], vec![5.0, 1.0]).unwrap();
        StopProblem::new(m, vec![4.0, 1.0], 1, rho).unwrap()
    }

    #[test]
    fn zero_discount_stops_everywhere() {
        let sol = solve(&two_state(0.0), Some(20), &SolverConfig::default()).unwrap();
        assert!(sol.converged());
        for p in 0..sol.grid().len() {
            let r: f64 = sol.grid().point(p).iter().zip([4.0, 1.0]).map(|(a, b)| a * b).sum();
            assert!((sol.values(1)[p] - r).abs() < 1e-12);
            assert_eq!(sol.actions(1)[p], Action::Stop);
            assert_eq!(sol.q_continue(1)[p], 0.0);
        }
    }

    #[test]
    fn residuals_contract() {
        let sol = solve(&two_state(0.8), Some(50), &SolverConfig::default()).unwrap();
        assert!(sol.converged());
        assert!(sol.residual() < 1e-6);
        let r = sol.residuals();
        for k in 5..r.len() {
            assert!(r[k] <= 0.8 * r[k - 1] + 1e-12, "iteration {k}: {} > 0.8 * {}", r[k], r[k - 1]);
        }
    }

    #[test]
    fn operator_rows_are_stochastic() {
        let p = two_state(0.8);
        let grid = BeliefGrid::new(2, 30).unwrap();
        let op = Operator::build(&p, &grid, 1e-10);
        let ones = vec![1.0; grid.len()];
        let mut out = vec![0.0; grid.len()];
        op.apply(&ones, &mut out);
        assert!(out.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn five_states_refused_without_force() {
        let m = HmmModel::poisson(
            vec![vec![0.2; 5]; 5],
            vec![0.2; 5],
            vec![5.0, 4.0, 3.0, 2.0, 1.0],
        )
        .unwrap();
        let p = StopProblem::new(m, vec![5.0, 4.0, 3.0, 2.0, 1.0], 1, 0.5).unwrap();
        assert!(matches!(solve(&p, None, &SolverConfig::default()), Err(Error::TooManyStates { states: 5 })));
        let cfg = SolverConfig { force: true, ..SolverConfig::default() };
        assert!(solve(&p, Some(4), &cfg).is_ok());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cfg = SolverConfig { max_iters: 3, ..SolverConfig::default() };
        let sol = solve(&two_state(0.95), Some(20), &cfg).unwrap();
        assert!(!sol.converged());
        assert_eq!(sol.iterations(), 3);
        assert!(sol.residual() >= cfg.tol);
    }

    #[test]
    fn csv_shape() {
        let sol = solve(&two_state(0.8), Some(4), &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("l,pi_1,pi_2,V,Q_stop,Q_continue,action"));
        assert_eq!(lines.count(), 5);
    }
}
