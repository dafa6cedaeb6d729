//! Linear threshold policies on the belief simplex.
//!
//! With `l` stops remaining the policy stops iff
//! `pi(2) + sum_{i=1}^{S-2} theta_l(i) pi(i+2) - theta_l(S-1) <= 0`
//! (1-based). In code `theta[l - 1]` holds the `S - 1` coefficients
//! 0-based: `theta[..S-2]` weigh `pi[2..]` and `theta[S-2]` is the intercept.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::hmm::ORDER_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearThresholdPolicy {
    states: usize,
    theta: Vec<Vec<f64>>,
}

impl LinearThresholdPolicy {
    /// Builds a policy without checking the structural constraints.
    pub fn new(states: usize, theta: Vec<Vec<f64>>) -> Result<Self> {
        if states < 2 {
            return Err(Error::Domain("a threshold policy needs at least two states".into()));
        }
        if theta.is_empty() {
            return Err(Error::Domain("a threshold policy needs at least one stop".into()));
        }
        for row in &theta {
            if row.len() != states - 1 {
                return Err(Error::Dimension { expected: states - 1, got: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("threshold coefficients must be finite".into()));
            }
        }
        Ok(Self { states, theta })
    }

    /// Builds a policy and rejects it unless both constraint sets hold.
    pub fn feasible(states: usize, theta: Vec<Vec<f64>>) -> Result<Self> {
        let policy = Self::new(states, theta)?;
        let mut violations = check_mlr_constraints(&policy).violations;
        violations.extend(check_subset_constraints(&policy).violations);
        if let Some(v) = violations.first() {
            return Err(Error::InfeasiblePolicy(format!("{v} ({} violation(s))", violations.len())));
        }
        Ok(policy)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn stops(&self) -> usize {
        self.theta.len()
    }

    /// Coefficients used with `l` stops remaining.
    pub fn theta(&self, l: usize) -> &[f64] {
        &self.theta[l - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.theta
    }

    /// `[0 1 theta_l] . [pi; -1]`; nonpositive means stop.
    pub fn decision_value(&self, l: usize, pi: &[f64]) -> f64 {
        let th = &self.theta[l - 1];
        let s = self.states;
        let slope: f64 = th[..s - 2].iter().zip(&pi[2..]).map(|(t, p)| t * p).sum();
        pi[1] + slope - th[s - 2]
    }

    pub fn decide(&self, l: usize, pi: &[f64]) -> Result<Action> {
        if pi.len() != self.states {
            return Err(Error::Dimension { expected: self.states, got: pi.len() });
        }
        if l == 0 || l > self.stops() {
            return Err(Error::Domain(format!("stops remaining {l} outside 1..={}", self.stops())));
        }
        Ok(self.decide_unchecked(l, pi))
    }

    pub(crate) fn decide_unchecked(&self, l: usize, pi: &[f64]) -> Action {
        if self.decision_value(l, pi) <= 0.0 {
            Action::Stop
        } else {
            Action::Continue
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Intercept `theta_l(S-1)` is negative.
    NegativeIntercept,
    NegativeCoefficient,
    /// `theta_l(S-2) < 1`.
    PivotBelowOne,
    /// `theta_l(i) > theta_l(S-2)` for `i < S-2`.
    AbovePivot,
    /// Intercept differs between `l - 1` and `l`.
    InterceptChanged,
    /// `theta_l(i) > theta_{l-1}(i)`.
    CoefficientIncreased,
}

/// One failed inequality; `index` is the 0-based coefficient position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintViolation {
    pub l: usize,
    pub index: usize,
    pub kind: ConstraintKind,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at l={}, coefficient {}", self.kind, self.l, self.index + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintReport {
    pub violations: Vec<ConstraintViolation>,
}

impl ConstraintReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Constraints making every stop set MLR-monotone along lines through `e_1` and `e_S`.
pub fn check_mlr_constraints(policy: &LinearThresholdPolicy) -> ConstraintReport {
    let s = policy.states();
    let mut violations = Vec::new();
    for l in 1..=policy.stops() {
        let th = policy.theta(l);
        let mut push = |index, kind| violations.push(ConstraintViolation { l, index, kind });
        if th[s - 2] < -ORDER_TOL {
            push(s - 2, ConstraintKind::NegativeIntercept);
        }
        if s >= 3 {
            let pivot = th[s - 3];
            for (i, &t) in th[..s - 2].iter().enumerate() {
                if t < -ORDER_TOL {
                    push(i, ConstraintKind::NegativeCoefficient);
                }
                if i < s - 3 && t > pivot + ORDER_TOL {
                    push(i, ConstraintKind::AbovePivot);
                }
            }
            if pivot < 1.0 - ORDER_TOL {
                push(s - 3, ConstraintKind::PivotBelowOne);
            }
        }
    }
    ConstraintReport { violations }
}

/// Constraints making the stop sets nested in `l`.
pub fn check_subset_constraints(policy: &LinearThresholdPolicy) -> ConstraintReport {
    let s = policy.states();
    let mut violations = Vec::new();
    for l in 2..=policy.stops() {
        let (prev, cur) = (policy.theta(l - 1), policy.theta(l));
        if (prev[s - 2] - cur[s - 2]).abs() > ORDER_TOL {
            violations.push(ConstraintViolation { l, index: s - 2, kind: ConstraintKind::InterceptChanged });
        }
        for i in 0..s - 2 {
            if cur[i] > prev[i] + ORDER_TOL {
                violations.push(ConstraintViolation { l, index: i, kind: ConstraintKind::CoefficientIncreased });
            }
        }
    }
    ConstraintReport { violations }
}

/// Unconstrained parameters mapped onto feasible threshold policies.
///
/// `phi[l - 1]` has `S - 1` entries laid out like `theta`. Only
/// `phi[0][S-2]` (intercept) and `phi[0][S-3]` (pivot excess) act as
/// magnitudes; every other entry is an angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiParams {
    states: usize,
    phi: Vec<Vec<f64>>,
}

impl PhiParams {
    pub fn new(states: usize, phi: Vec<Vec<f64>>) -> Result<Self> {
        if states < 2 || phi.is_empty() {
            return Err(Error::Domain("phi needs at least two states and one stop".into()));
        }
        for row in &phi {
            if row.len() != states - 1 {
                return Err(Error::Dimension { expected: states - 1, got: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("phi entries must be finite".into()));
            }
        }
        Ok(Self { states, phi })
    }

    pub fn zeros(states: usize, stops: usize) -> Self {
        Self { states, phi: vec![vec![0.0; states - 1]; stops] }
    }

    pub fn from_flat(states: usize, stops: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != stops * (states - 1) {
            return Err(Error::Dimension { expected: stops * (states - 1), got: flat.len() });
        }
        Self::new(states, flat.chunks(states - 1).map(<[f64]>::to_vec).collect())
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn stops(&self) -> usize {
        self.phi.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.phi
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.phi.concat()
    }

    /// True for the magnitude slots, false for angles.
    pub fn is_magnitude(&self, l: usize, i: usize) -> bool {
        l == 1 && (i + 2 == self.states || i + 3 == self.states)
    }

    /// Upper end of the default sampling range of a slot.
    pub fn slot_range(&self, l: usize, i: usize) -> f64 {
        if self.is_magnitude(l, i) {
            2.0
        } else {
            FRAC_PI_2
        }
    }
}

/// Maps `phi` to a policy satisfying both constraint sets for every input.
///
/// Intercept `theta_l(S-1) = phi_1(S-1)^2`, pivot
/// `theta_l(S-2) = 1 + phi_1(S-2)^2 prod_{k=2}^{l} sin^2 phi_k(S-2)` and
/// `theta_l(i) = theta_l(S-2) prod_{k=1}^{l} sin^2 phi_k(i)` for `i < S-2`
/// (1-based). The running product keeps the slopes nonincreasing in `l`.
pub fn phi_to_theta(phi: &PhiParams) -> LinearThresholdPolicy {
    let s = phi.states();
    let rows = phi.rows();
    let intercept = rows[0][s - 2].powi(2);
    let mut theta = Vec::with_capacity(rows.len());
    let mut pivot_factor = 1.0;
    let mut slope_factor = vec![1.0; s.saturating_sub(3)];
    for (k, row) in rows.iter().enumerate() {
        let mut th = vec![0.0; s - 1];
        th[s - 2] = intercept;
        if s >= 3 {
            if k > 0 {
                pivot_factor *= row[s - 3].sin().powi(2);
            }
            let pivot = 1.0 + rows[0][s - 3].powi(2) * pivot_factor;
            th[s - 3] = pivot;
            for (i, f) in slope_factor.iter_mut().enumerate() {
                *f *= row[i].sin().powi(2);
                th[i] = pivot * *f;
            }
        }
        theta.push(th);
    }
    LinearThresholdPolicy { states: s, theta }
}

/// On-disk policy document. Loading re-validates both constraint sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDoc {
    #[serde(rename = "L")]
    pub stops: usize,
    #[serde(rename = "S")]
    pub states: usize,
    /// Row-major, `theta[l - 1]`.
    pub theta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
}

impl PolicyDoc {
    pub fn new(policy: &LinearThresholdPolicy, phi: Option<&PhiParams>) -> Self {
        Self {
            stops: policy.stops(),
            states: policy.states(),
            theta: policy.rows().to_vec(),
            phi: phi.map(|p| p.rows().to_vec()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.theta.len() != doc.stops {
            return Err(Error::Dimension { expected: doc.stops, got: doc.theta.len() });
        }
        LinearThresholdPolicy::feasible(doc.states, doc.theta.clone())?;
        if let Some(phi) = &doc.phi {
            PhiParams::new(doc.states, phi.clone())?;
        }
        Ok(doc)
    }

    pub fn policy(&self) -> Result<LinearThresholdPolicy> {
        LinearThresholdPolicy::feasible(self.states, self.theta.clone())
    }
}
