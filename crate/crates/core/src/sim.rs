//! Monte Carlo evaluation of scheduling policies.
//!
//! A rollout starts from `X_0 ~ pi0` with belief `pi0`. At every epoch
//! `t = 0..N-1` the policy sees the belief and the number of stops left;
//! a stop with `l` stops left earns `rho^t r_l(X_t)`. The chain then moves,
//! emits `Y_{t+1}` and the belief is filtered. Stops do not reset the belief.

use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::action::Action;
use crate::error::{Error, Result};
use crate::hmm::{Belief, ChainSampler, HmmModel, Observation};
use crate::policy::LinearThresholdPolicy;
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::stopping::{solve, GridSolution, SolverConfig, StopProblem};

/// Scheduling rule driven through a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Interpolated Q comparison on a solved grid.
    GridDp(&'a GridSolution),
    Linear(&'a LinearThresholdPolicy),
    /// Stops at evenly spaced slots, see [`periodic_slots`].
    Periodic,
    /// Stops at distinct uniformly drawn slots, redrawn for every rollout.
    Random { seed: u64 },
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::GridDp(_) => "griddp",
            Policy::Linear(_) => "linear",
            Policy::Periodic => "periodic",
            Policy::Random { .. } => "random",
        }
    }

    fn uses_belief(&self) -> bool {
        matches!(self, Policy::GridDp(_) | Policy::Linear(_))
    }

    fn check(&self, problem: &StopProblem) -> Result<()> {
        let (s, l) = (problem.states(), problem.stops());
        let (ps, pl) = match self {
            Policy::GridDp(sol) => (sol.grid().states(), sol.stops()),
            Policy::Linear(p) => (p.states(), p.stops()),
            _ => return Ok(()),
        };
        if ps != s {
            return Err(Error::Dimension { expected: s, got: ps });
        }
        if pl < l {
            return Err(Error::Dimension { expected: l, got: pl });
        }
        Ok(())
    }
}

/// `round(k N / (L + 1))` for `k = 1..L`, made strictly increasing and kept
/// inside the horizon so that `min(L, N)` slots always fit.
pub fn periodic_slots(horizon: usize, stops: usize) -> Vec<usize> {
    if horizon <= stops {
        return (0..horizon).collect();
    }
    let mut slots = Vec::with_capacity(stops);
    for k in 1..=stops {
        let target = (k as f64 * horizon as f64 / (stops + 1) as f64).round() as usize;
        let lo = slots.last().map_or(0, |&s: &usize| s + 1);
        let hi = horizon - 1 - (stops - k);
        slots.push(target.max(lo).min(hi));
    }
    slots
}

/// `min(L, N)` distinct slots drawn uniformly from `0..N`, sorted.
pub fn random_slots(horizon: usize, stops: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut slots = sample(rng, horizon, stops.min(horizon)).into_vec();
    slots.sort_unstable();
    slots
}

/// Scoring of rollouts that place fewer than `L` stops within the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompletionRule {
    /// Count the stops that did occur.
    #[default]
    Truncate,
    /// Drop the rollout from the average.
    Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Strictly increasing stop epochs.
    pub stop_times: Vec<usize>,
    pub stop_states: Vec<usize>,
    /// Undiscounted `r_l(X_tau)` per stop.
    pub rewards: Vec<f64>,
    /// `sum_l rho^{tau_l} r_l(X_{tau_l})`.
    pub total: f64,
}

impl RolloutResult {
    pub fn completed(&self, stops: usize) -> bool {
        self.stop_times.len() == stops
    }
}

/// One epoch of a traced rollout. `observation` produced `belief` (none at `t = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub state: usize,
    pub observation: Option<Observation>,
    pub belief: Vec<f64>,
    pub stops_remaining: usize,
    pub action: Action,
}

fn simulate(
    problem: &StopProblem,
    sampler: &ChainSampler,
    policy: Policy<'_>,
    horizon: usize,
    seed: u64,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<RolloutResult> {
    let model = problem.model();
    let big_l = problem.stops();
    let rho = problem.discount();
    let mut rng = rng_from_seed(seed);
    let slots = match policy {
        Policy::Periodic => periodic_slots(horizon, big_l),
        Policy::Random { seed: policy_seed } => {
            let mut slot_rng = rng_from_seed(derive_seed(derive_seed(seed, 1), policy_seed));
            random_slots(horizon, big_l, &mut slot_rng)
        }
        _ => Vec::new(),
    };
    let track = policy.uses_belief() || trace.is_some();

    let mut belief = model.initial().to_vec();
    let mut scratch = vec![0.0; belief.len()];
    let mut x = sampler.initial(&mut rng);
    let mut y = None;
    let mut result = RolloutResult { stop_times: Vec::new(), stop_states: Vec::new(), rewards: Vec::new(), total: 0.0 };
    let mut next_slot = 0;
    let mut discount = 1.0;
    for t in 0..horizon {
        let l = big_l - result.stop_times.len();
        let action = match policy {
            Policy::GridDp(sol) => sol.action_at(l, &belief),
            Policy::Linear(p) => p.decide_unchecked(l, &belief),
            Policy::Periodic | Policy::Random { .. } => {
                if slots.get(next_slot) == Some(&t) {
                    next_slot += 1;
                    Action::Stop
                } else {
                    Action::Continue
                }
            }
        };
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceStep { t, state: x, observation: y, belief: belief.clone(), stops_remaining: l, action });
        }
        if action == Action::Stop {
            let r = problem.reward(l)[x];
            result.stop_times.push(t);
            result.stop_states.push(x);
            result.rewards.push(r);
            result.total += discount * r;
            if result.stop_times.len() == big_l {
                break;
            }
        }
        x = sampler.step(x, &mut rng);
        let obs = sampler.emit(x, &mut rng);
        if track {
            model.update_in_place(&mut belief, &mut scratch, obs)?;
        }
        y = Some(obs);
        discount *= rho;
    }
    Ok(result)
}

/// One rollout over `horizon` epochs, deterministic in `seed`.
pub fn rollout(problem: &StopProblem, policy: Policy<'_>, horizon: usize, seed: u64) -> Result<RolloutResult> {
    policy.check(problem)?;
    simulate(problem, &problem.model().sampler(), policy, horizon, seed, None)
}

/// Like [`rollout`], also returning every visited epoch.
pub fn rollout_trace(
    problem: &StopProblem,
    policy: Policy<'_>,
    horizon: usize,
    seed: u64,
) -> Result<(RolloutResult, Vec<TraceStep>)> {
    policy.check(problem)?;
    let mut steps = Vec::with_capacity(horizon);
    let result = simulate(problem, &problem.model().sampler(), policy, horizon, seed, Some(&mut steps))?;
    Ok((result, steps))
}

/// Writes `t, state, observation, pi_1..pi_S, stops_remaining, action` (states 1-based).
pub fn write_trace_csv<W: Write>(steps: &[TraceStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let s = steps.first().map_or(0, |st| st.belief.len());
    let mut header: Vec<String> = ["t", "state", "observation"].map(String::from).to_vec();
    header.extend((1..=s).map(|i| format!("pi_{i}")));
    header.extend(["stops_remaining", "action"].map(String::from));
    w.write_record(&header)?;
    for st in steps {
        let mut rec = vec![st.t.to_string(), (st.state + 1).to_string(), st.observation.map_or(String::new(), |y| y.to_string())];
        rec.extend(st.belief.iter().map(f64::to_string));
        rec.push(st.stops_remaining.to_string());
        rec.push(st.action.code().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo estimate of a policy's discounted reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(batch)`.
    pub stderr: f64,
    pub batch: usize,
    /// Rollouts that placed all `L` stops.
    pub completed: usize,
    pub seed: u64,
}

/// Totals of `batch` rollouts with seeds `derive_seed(seed, i)`, in index order.
pub fn rollout_totals(
    problem: &StopProblem,
    policy: Policy<'_>,
    horizon: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<RolloutResult>> {
    policy.check(problem)?;
    let sampler = problem.model().sampler();
    (0..batch)
        .into_par_iter()
        .map(|i| simulate(problem, &sampler, policy, horizon, derive_seed(seed, i as u64), None))
        .collect()
}

fn summarize(values: &[f64], batch: usize, completed: usize, seed: u64) -> Evaluation {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Evaluation { mean, stderr: (var / n).sqrt(), batch, completed, seed }
}

pub fn evaluate(problem: &StopProblem, policy: Policy<'_>, horizon: usize, batch: usize, seed: u64) -> Result<Evaluation> {
    evaluate_with(problem, policy, horizon, batch, seed, CompletionRule::Truncate)
}

pub fn evaluate_with(
    problem: &StopProblem,
    policy: Policy<'_>,
    horizon: usize,
    batch: usize,
    seed: u64,
    rule: CompletionRule,
) -> Result<Evaluation> {
    if batch == 0 {
        return Err(Error::Domain("batch must be at least 1".into()));
    }
    let results = rollout_totals(problem, policy, horizon, batch, seed)?;
    let big_l = problem.stops();
    let completed = results.iter().filter(|r| r.completed(big_l)).count();
    let values: Vec<f64> = match rule {
        CompletionRule::Truncate => results.iter().map(|r| r.total).collect(),
        CompletionRule::Discard => results.iter().filter(|r| r.completed(big_l)).map(|r| r.total).collect(),
    };
    if values.is_empty() {
        return Err(Error::NoCompletedRollouts { stops: big_l });
    }
    Ok(summarize(&values, batch, completed, seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyScore {
    pub policy: String,
    pub evaluation: Evaluation,
}

/// Paired-seed comparison: every policy sees the same chain realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub scores: Vec<PolicyScore>,
    pub horizon: usize,
}

impl ComparisonReport {
    pub fn score(&self, name: &str) -> Option<&Evaluation> {
        self.scores.iter().find(|s| s.policy == name).map(|s| &s.evaluation)
    }

    /// Mean of `a` over mean of `b`.
    pub fn ratio(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.score(a)?.mean / self.score(b)?.mean)
    }

    /// Ratios of the first policy against each other one.
    pub fn ratios(&self) -> Vec<(String, String, f64)> {
        let Some(first) = self.scores.first() else { return Vec::new() };
        self.scores[1..]
            .iter()
            .map(|s| (first.policy.clone(), s.policy.clone(), first.evaluation.mean / s.evaluation.mean))
            .collect()
    }

    /// `policy, mean, stderr, batch, seed`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["policy", "mean", "stderr", "batch", "seed"])?;
        for s in &self.scores {
            let e = &s.evaluation;
            w.write_record([s.policy.clone(), e.mean.to_string(), e.stderr.to_string(), e.batch.to_string(), e.seed.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Bar-chart data: `policy, mean, lower, upper, ratio_to_first` with a 95% normal band.
    pub fn write_bars_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["policy", "mean", "lower", "upper", "ratio_to_first"])?;
        let base = self.scores.first().map_or(f64::NAN, |s| s.evaluation.mean);
        for s in &self.scores {
            let e = &s.evaluation;
            w.write_record([
                s.policy.clone(),
                e.mean.to_string(),
                (e.mean - 1.96 * e.stderr).to_string(),
                (e.mean + 1.96 * e.stderr).to_string(),
                (base / e.mean).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every named policy on the same rollout seeds.
pub fn compare(
    problem: &StopProblem,
    policies: &[(String, Policy<'_>)],
    horizon: usize,
    batch: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if policies.len() < 2 {
        return Err(Error::Domain("comparison needs at least two policies".into()));
    }
    let scores = policies
        .iter()
        .map(|(name, p)| Ok(PolicyScore { policy: name.clone(), evaluation: evaluate(problem, *p, horizon, batch, seed)? }))
        .collect::<Result<_>>()?;
    Ok(ComparisonReport { scores, horizon })
}

/// Observations emitted from state `before` for `t < switch_at` and from
/// state `after` from then on, with no chain dynamics.
pub fn regime_switch_series(
    model: &HmmModel,
    before: usize,
    after: usize,
    switch_at: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Observation>> {
    let s = model.states();
    if before >= s || after >= s {
        return Err(Error::Domain(format!("regime states must be below {s}")));
    }
    let sampler = model.sampler();
    let mut rng = rng_from_seed(seed);
    Ok((0..len).map(|t| sampler.emit(if t < switch_at { before } else { after }, &mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    /// Grid resolution of the single-stop problem.
    pub resolution: usize,
    pub solver: SolverConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { resolution: 200, solver: SolverConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// Number of observations absorbed when the stop set is first entered.
    pub stop_time: Option<usize>,
    /// `beliefs[k]` is the posterior after `k` observations.
    pub beliefs: Vec<Belief>,
    pub solution: GridSolution,
}

/// Single-stop change detection on a two-state model: filters `observations`
/// from `pi0` and reports the first belief inside the optimal stop set.
pub fn detect_change(
    model: &HmmModel,
    reward: &[f64],
    observations: &[Observation],
    rho: f64,
    config: &DetectConfig,
) -> Result<Detection> {
    if model.states() != 2 {
        return Err(Error::Dimension { expected: 2, got: model.states() });
    }
    if observations.is_empty() {
        return Err(Error::Domain("observation series is empty".into()));
    }
    let problem = StopProblem::new(model.clone(), reward.to_vec(), 1, rho)?;
    let solution = solve(&problem, Some(config.resolution), &config.solver)?;
    let mut beliefs = vec![model.initial_belief()];
    let mut stop_time = solution.action_at(1, model.initial()).is_stop().then_some(0);
    for (k, &y) in observations.iter().enumerate() {
        let (next, _) = model.belief_update(&beliefs[k], y)?;
        if stop_time.is_none() && solution.action_at(1, next.as_slice()).is_stop() {
            stop_time = Some(k + 1);
        }
        beliefs.push(next);
    }
    Ok(Detection { stop_time, beliefs, solution })
}

impl Detection {
    /// `k, observation, pi_1, pi_2, stop`, one row per absorbed observation count.
    pub fn write_belief_path_csv<W: Write>(&self, observations: &[Observation], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "observation", "pi_1", "pi_2", "stop"])?;
        for (k, b) in self.beliefs.iter().enumerate() {
            let obs = if k == 0 { String::new() } else { observations[k - 1].to_string() };
            let stop = u8::from(self.stop_time == Some(k));
            w.write_record([k.to_string(), obs, b[0].to_string(), b[1].to_string(), stop.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_slot_examples() {
        assert_eq!(periodic_slots(100, 5), vec![17, 33, 50, 67, 83]);
        assert_eq!(periodic_slots(3, 5), vec![0, 1, 2]);
        assert_eq!(periodic_slots(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(periodic_slots(6, 5), vec![1, 2, 3, 4, 5]);
        for n in 5..60 {
            let s = periodic_slots(n, 5);
            assert_eq!(s.len(), 5);
            assert!(s.windows(2).all(|w| w[0] < w[1]) && s[4] < n);
        }
    }

    #[test]
    fn random_slots_are_distinct() {
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let s = random_slots(20, 5, &mut rng);
            assert_eq!(s.len(), 5);
            assert!(s.windows(2).all(|w| w[0] < w[1]) && s[4] < 20);
        }
    }
}
