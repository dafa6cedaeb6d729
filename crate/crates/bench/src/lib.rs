//! Shared inputs for the criterion benchmarks.

use adstop::experiments::experiment;
use adstop::{Belief, LinearThresholdPolicy, StopProblem};

/// Discount used by every benchmark problem.
pub const RHO: f64 = 0.9;

pub fn problem(name: &str) -> StopProblem {
    experiment(name).and_then(|e| e.problem(RHO)).expect("built-in experiment")
}

/// A feasible policy for `states` states and `stops` stops with moderate thresholds.
pub fn threshold_policy(states: usize, stops: usize) -> LinearThresholdPolicy {
    let mut row = vec![0.5; states - 1];
    if states >= 3 {
        row[states - 3] = 1.2;
    }
    row[states - 2] = 0.6;
    LinearThresholdPolicy::feasible(states, vec![row; stops]).expect("feasible thresholds")
}

pub fn uniform(states: usize) -> Belief {
    Belief::uniform(states)
}
