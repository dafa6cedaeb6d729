use std::fmt;

use crate::error::{Error, Result};
use crate::hmm::{is_tp2, poisson_ln_pmf, tp2_violation, Emission, HmmModel};
use crate::matrix::Matrix;

/// Stop rewards, either shared by all stops or one vector per number of stops remaining.
#[derive(Debug, Clone, PartialEq)]
pub enum StopRewards {
    Constant(Vec<f64>),
    /// `PerStop[l - 1]` is paid when stopping with `l` stops remaining.
    PerStop(Vec<Vec<f64>>),
}

/// Multiple-stopping POMDP: `L` stops, discount `rho`, stop reward `r'pi`,
/// zero reward for continuing.
#[derive(Debug, Clone, PartialEq)]
pub struct StopProblem {
    model: HmmModel,
    rewards: StopRewards,
    stops: usize,
    discount: f64,
}

fn check_reward(r: &[f64], states: usize) -> Result<()> {
    if r.len() != states {
        return Err(Error::Dimension { expected: states, got: r.len() });
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("rewards must be finite".into()));
    }
    Ok(())
}

fn check_discount(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("discount {rho} outside [0, 1]")));
    }
    Ok(())
}

impl StopProblem {
    pub fn new(model: HmmModel, reward: Vec<f64>, stops: usize, discount: f64) -> Result<Self> {
        check_reward(&reward, model.states())?;
        check_discount(discount)?;
        if stops == 0 {
            return Err(Error::Domain("number of stops must be at least 1".into()));
        }
        Ok(Self { model, rewards: StopRewards::Constant(reward), stops, discount })
    }

    /// Rewards `r_i = alpha_i * g_i` for a Poisson model.
    pub fn from_click_rates(model: HmmModel, alpha: &[f64], stops: usize, discount: f64) -> Result<Self> {
        let g = model
            .emission()
            .poisson_means()
            .ok_or_else(|| Error::Domain("click-rate rewards need Poisson emission".into()))?;
        if alpha.len() != g.len() {
            return Err(Error::Dimension { expected: g.len(), got: alpha.len() });
        }
        let r = alpha.iter().zip(g).map(|(a, g)| a * g).collect();
        Self::new(model, r, stops, discount)
    }

    /// General case: `rewards[l - 1]` is the stop reward with `l` stops remaining.
    pub fn with_per_stop_rewards(model: HmmModel, rewards: Vec<Vec<f64>>, discount: f64) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::Domain("number of stops must be at least 1".into()));
        }
        for r in &rewards {
            check_reward(r, model.states())?;
        }
        check_discount(discount)?;
        Ok(Self { model, stops: rewards.len(), rewards: StopRewards::PerStop(rewards), discount })
    }

    pub fn model(&self) -> &HmmModel {
        &self.model
    }

    pub fn stops(&self) -> usize {
        self.stops
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn states(&self) -> usize {
        self.model.states()
    }

    pub fn rewards(&self) -> &StopRewards {
        &self.rewards
    }

    /// Reward vector used when stopping with `l` stops remaining (`1 <= l <= L`).
    pub fn reward(&self, l: usize) -> &[f64] {
        match &self.rewards {
            StopRewards::Constant(r) => r,
            StopRewards::PerStop(rs) => &rs[l - 1],
        }
    }

    /// Largest absolute stop reward.
    pub fn reward_scale(&self) -> f64 {
        (1..=self.stops)
            .flat_map(|l| self.reward(l).iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        check_discount(discount)?;
        Ok(Self { discount, ..self.clone() })
    }

    pub fn with_stops(&self, stops: usize) -> Result<Self> {
        match &self.rewards {
            StopRewards::Constant(r) => Self::new(self.model.clone(), r.clone(), stops, self.discount),
            StopRewards::PerStop(_) => Err(Error::Domain("cannot resize per-stop rewards".into())),
        }
    }
}

/// Evidence that a structural assumption fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Witness {
    /// Adjacent entries `(i, i + 1)` (0-based) that increase.
    Increase(usize, usize),
    /// Negative 2x2 minor on rows `(i1, i2)` and columns `(j1, j2)` (0-based).
    Minor(usize, usize, usize, usize),
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Witness::Increase(i, j) => write!(f, "entries {} and {} increase", i + 1, j + 1),
            Witness::Minor(i1, i2, j1, j2) => {
                write!(f, "minor rows ({}, {}) cols ({}, {}) is negative", i1 + 1, i2 + 1, j1 + 1, j2 + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub holds: bool,
    pub witness: Option<Witness>,
}

impl Check {
    fn from_witness(witness: Option<Witness>) -> Self {
        Self { holds: witness.is_none(), witness }
    }
}

/// Structural assumptions behind the threshold results:
/// A1 rewards decrease with the state index, A2 the emission is TP2
/// (Poisson means nonincreasing), A3 `P` is TP2, A4 `(I - rho P') r` decreases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub a1: Check,
    pub a2: Check,
    pub a3: Check,
    pub a4: Check,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.a1.holds && self.a2.holds && self.a3.holds && self.a4.holds
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, c) in [("A1", self.a1), ("A2", self.a2), ("A3", self.a3), ("A4", self.a4)] {
            match c.witness {
                None => writeln!(f, "{name}: holds")?,
                Some(w) => writeln!(f, "{name}: violated ({w})")?,
            }
        }
        Ok(())
    }
}

fn first_increase(v: &[f64]) -> Option<Witness> {
    v.windows(2).position(|w| w[1] > w[0]).map(|i| Witness::Increase(i, i + 1))
}

pub fn check_assumptions(problem: &StopProblem) -> AssumptionReport {
    let model = problem.model();
    let rho = problem.discount();
    let p = model.transition();
    let rewards: Vec<&[f64]> = (1..=problem.stops()).map(|l| problem.reward(l)).collect();

    let a1 = rewards.iter().find_map(|r| first_increase(r));
    let a2 = match model.emission() {
        Emission::Poisson { g, .. } => first_increase(g),
        Emission::Categorical { b } => tp2_violation(b).map(|(a, b, c, d)| Witness::Minor(a, b, c, d)),
    };
    let a3 = tp2_violation(p).map(|(a, b, c, d)| Witness::Minor(a, b, c, d));
    let a4 = rewards.iter().find_map(|r| {
        let pr = p.tr_mul_vec(r);
        let v: Vec<f64> = r.iter().zip(&pr).map(|(ri, x)| ri - rho * x).collect();
        first_increase(&v)
    });
    debug_assert_eq!(a3.is_none(), is_tp2(p));
    AssumptionReport {
        a1: Check::from_witness(a1),
        a2: Check::from_witness(a2),
        a3: Check::from_witness(a3),
        a4: Check::from_witness(a4),
    }
}

/// Finite observation alphabet used by the dynamic program.
///
/// For Poisson emission the count axis is cut at `y_max` and the last column
/// carries the whole upper tail `P(Y >= y_max)`, so every row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub y_max: usize,
    /// `S x (y_max + 1)` likelihoods.
    pub likelihood: Matrix,
}

/// Smallest `y_max` with `P(Y <= y_max | state) >= 1 - mass_tol` for every state.
pub fn truncate_observations(model: &HmmModel, mass_tol: f64) -> ObservationTable {
    match model.emission() {
        Emission::Categorical { b } => ObservationTable { y_max: b.cols() - 1, likelihood: b.clone() },
        Emission::Poisson { g, .. } => {
            let target = 1.0 - mass_tol;
            let mut y_max = 0usize;
            for &gi in g {
                let mut cdf = 0.0;
                let mut y = 0u32;
                loop {
                    cdf += poisson_ln_pmf(gi, y).exp();
                    if cdf >= target {
                        break;
                    }
                    y += 1;
                }
                y_max = y_max.max(y as usize);
            }
            let s = g.len();
            let mut likelihood = Matrix::zeros(s, y_max + 1);
            for (i, &gi) in g.iter().enumerate() {
                let mut head = 0.0;
                for y in 0..y_max {
                    let pmf = poisson_ln_pmf(gi, y as u32).exp();
                    likelihood[(i, y)] = pmf;
                    head += pmf;
                }
                likelihood[(i, y_max)] = (1.0 - head).max(0.0);
            }
            ObservationTable { y_max, likelihood }
        }
    }
}
