//! Hidden Markov models of viewer engagement.
//!
//! States are indexed `0..S` with state `0` the most engaged one. Observations
//! are nonnegative integers: viewer counts for Poisson emission, symbol indices
//! (symbol `0` = "high") for categorical emission.
//!
//! The stochastic orders follow the same direction: a belief is *larger* when it
//! puts relatively more mass on low state indices, so `e_1` (index 0) is the
//! maximal belief.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{rng_from_seed, SimRng};

/// Tolerance for stochasticity of model parameters.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance on the sum of a belief vector.
pub const BELIEF_TOL: f64 = 1e-10;
/// Slack on ordering and TP2 predicates.
pub const ORDER_TOL: f64 = 1e-12;

/// An observation: a viewer count or a categorical symbol index.
pub type Observation = u32;

/// Emission law of the hidden chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    /// Poisson counts with state dependent means `g`.
    Poisson { g: Vec<f64>, ln_g: Vec<f64> },
    /// Row-stochastic `S x M` observation matrix.
    Categorical { b: Matrix },
}

impl Emission {
    pub fn poisson(g: Vec<f64>) -> Self {
        let ln_g = g.iter().map(|x| x.ln()).collect();
        Emission::Poisson { g, ln_g }
    }

    pub fn categorical(b: Matrix) -> Self {
        Emission::Categorical { b }
    }

    pub fn states(&self) -> usize {
        match self {
            Emission::Poisson { g, .. } => g.len(),
            Emission::Categorical { b } => b.rows(),
        }
    }

    /// Number of symbols for a categorical emission, `None` for Poisson.
    pub fn symbols(&self) -> Option<usize> {
        match self {
            Emission::Poisson { .. } => None,
            Emission::Categorical { b } => Some(b.cols()),
        }
    }

    pub fn poisson_means(&self) -> Option<&[f64]> {
        match self {
            Emission::Poisson { g, .. } => Some(g),
            Emission::Categorical { .. } => None,
        }
    }
}

/// Log of the Poisson pmf, `y ln g - g - ln y!`.
pub fn poisson_ln_pmf(g: f64, y: Observation) -> f64 {
    if y == 0 {
        return -g;
    }
    let y = f64::from(y);
    y * g.ln() - g - ln_gamma(y + 1.0)
}

/// `S`-state hidden Markov model `(P, pi0, emission)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct HmmModel {
    p: Matrix,
    pi0: Vec<f64>,
    emission: Emission,
}

impl HmmModel {
    pub fn new(p: Matrix, pi0: Vec<f64>, emission: Emission) -> Result<Self> {
        let s = pi0.len();
        if s == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        if p.rows() != s || p.cols() != s {
            return Err(Error::InvalidModel(format!(
                "transition matrix is {}x{}, expected {s}x{s}",
                p.rows(),
                p.cols()
            )));
        }
        if !p.is_row_stochastic(STOCHASTIC_TOL) {
            return Err(Error::InvalidModel("transition matrix is not row-stochastic".into()));
        }
        if pi0.iter().any(|&x| x.is_nan() || x < 0.0) || (pi0.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidModel("initial distribution is not a probability vector".into()));
        }
        if emission.states() != s {
            return Err(Error::InvalidModel(format!(
                "emission has {} states, expected {s}",
                emission.states()
            )));
        }
        match &emission {
            Emission::Poisson { g, .. } => {
                if g.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidModel("Poisson means must be positive and finite".into()));
                }
            }
            Emission::Categorical { b } => {
                if !b.is_row_stochastic(STOCHASTIC_TOL) {
                    return Err(Error::InvalidModel("observation matrix is not row-stochastic".into()));
                }
            }
        }
        Ok(Self { p, pi0, emission })
    }

    pub fn poisson(p: Vec<Vec<f64>>, pi0: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_rows(p)?, pi0, Emission::poisson(g))
    }

    pub fn categorical(p: Vec<Vec<f64>>, pi0: Vec<f64>, b: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(Matrix::from_rows(p)?, pi0, Emission::categorical(Matrix::from_rows(b)?))
    }

    pub fn states(&self) -> usize {
        self.pi0.len()
    }

    pub fn transition(&self) -> &Matrix {
        &self.p
    }

    pub fn initial(&self) -> &[f64] {
        &self.pi0
    }

    pub fn initial_belief(&self) -> Belief {
        Belief(self.pi0.clone())
    }

    pub fn emission(&self) -> &Emission {
        &self.emission
    }

    /// Same chain with a different initial distribution.
    pub fn with_initial(&self, pi0: Vec<f64>) -> Result<Self> {
        Self::new(self.p.clone(), pi0, self.emission.clone())
    }

    fn check_observation(&self, y: Observation) -> Result<()> {
        if let Emission::Categorical { b } = &self.emission {
            if y as usize >= b.cols() {
                return Err(Error::Domain(format!(
                    "symbol {y} out of range for {} symbols",
                    b.cols()
                )));
            }
        }
        Ok(())
    }

    /// `B(state, y)`; Poisson probabilities are evaluated in log space.
    pub fn obs_likelihood(&self, state: usize, y: Observation) -> Result<f64> {
        Ok(self.obs_ln_likelihood(state, y)?.exp())
    }

    pub fn obs_ln_likelihood(&self, state: usize, y: Observation) -> Result<f64> {
        if state >= self.states() {
            return Err(Error::Domain(format!("state {state} out of range for {} states", self.states())));
        }
        self.check_observation(y)?;
        Ok(match &self.emission {
            Emission::Poisson { g, .. } => poisson_ln_pmf(g[state], y),
            Emission::Categorical { b } => b[(state, y as usize)].ln(),
        })
    }

    /// Writes `ln B(i, y) - c` for every state into `out` and returns the shift `c`.
    /// For Poisson the `ln y!` term is folded into the shift.
    fn shifted_ln_likelihoods(&self, y: Observation, out: &mut [f64]) -> f64 {
        match &self.emission {
            Emission::Poisson { g, ln_g } => {
                let yf = f64::from(y);
                for ((o, &gi), &lgi) in out.iter_mut().zip(g).zip(ln_g) {
                    *o = if y == 0 { -gi } else { yf * lgi - gi };
                }
                if y == 0 {
                    0.0
                } else {
                    -ln_gamma(yf + 1.0)
                }
            }
            Emission::Categorical { b } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = b[(i, y as usize)].ln();
                }
                0.0
            }
        }
    }

    /// In-place filter step on raw probabilities. `scratch` must have length `S`.
    /// Returns `ln sigma(pi, y)`.
    pub(crate) fn update_in_place(&self, probs: &mut [f64], scratch: &mut [f64], y: Observation) -> Result<f64> {
        let s = self.states();
        debug_assert_eq!(probs.len(), s);
        self.check_observation(y)?;
        // scratch <- P' pi
        self.p.tr_mul_vec_into(probs, scratch);
        // probs <- ln B(., y) - shift
        let shift = self.shifted_ln_likelihoods(y, probs);
        let mut top = f64::NEG_INFINITY;
        for i in 0..s {
            if scratch[i] > 0.0 && probs[i] > top {
                top = probs[i];
            }
        }
        if !top.is_finite() {
            return Err(Error::FilterDegenerate { observation: y });
        }
        let mut total = 0.0;
        for i in 0..s {
            let w = if scratch[i] > 0.0 { (probs[i] - top).exp() * scratch[i] } else { 0.0 };
            probs[i] = w;
            total += w;
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::FilterDegenerate { observation: y });
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(total.ln() + top + shift)
    }

    /// Bayesian filter `T(pi, y)` and normalizer `sigma(pi, y) = 1' B_y P' pi`.
    ///
    /// The posterior is computed with a log-space shift, so it stays exact even
    /// when `sigma` itself underflows to zero for extreme counts.
    pub fn belief_update(&self, pi: &Belief, y: Observation) -> Result<(Belief, f64)> {
        if pi.len() != self.states() {
            return Err(Error::Dimension { expected: self.states(), got: pi.len() });
        }
        let mut probs = pi.0.clone();
        let mut scratch = vec![0.0; probs.len()];
        let ln_sigma = self.update_in_place(&mut probs, &mut scratch, y)?;
        Ok((Belief(probs), ln_sigma.exp()))
    }

    /// Cached sampling tables for simulation.
    pub fn sampler(&self) -> ChainSampler {
        ChainSampler::new(self)
    }

    /// Simulates `horizon` steps: `X_0 ~ pi0`, `X_{t+1} ~ P(X_t, .)`, `Y_t ~ B(X_t, .)`.
    pub fn sample_trajectory(&self, horizon: usize, seed: u64) -> Trajectory {
        let sampler = self.sampler();
        let mut rng = rng_from_seed(seed);
        let mut states = Vec::with_capacity(horizon);
        let mut obs = Vec::with_capacity(horizon);
        let mut x = sampler.initial(&mut rng);
        for t in 0..horizon {
            if t > 0 {
                x = sampler.step(x, &mut rng);
            }
            states.push(x);
            obs.push(sampler.emit(x, &mut rng));
        }
        Trajectory { states, obs }
    }

    /// Stationary distribution by power iteration (used for diagnostics).
    pub fn stationary(&self) -> Vec<f64> {
        let s = self.states();
        let mut v = vec![1.0 / s as f64; s];
        for _ in 0..100_000 {
            let next = self.p.tr_mul_vec(&v);
            let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if diff < 1e-15 {
                break;
            }
        }
        v
    }
}

/// Hidden states and observations of one simulated path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub obs: Vec<Observation>,
}

/// Precomputed cumulative tables and emission samplers for one model.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    initial_cdf: Vec<f64>,
    row_cdf: Vec<Vec<f64>>,
    emit: EmitSampler,
}

#[derive(Debug, Clone)]
enum EmitSampler {
    Poisson(Vec<Poisson<f64>>),
    Categorical(Vec<Vec<f64>>),
}

fn cdf(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

impl ChainSampler {
    fn new(model: &HmmModel) -> Self {
        let s = model.states();
        let emit = match &model.emission {
            Emission::Poisson { g, .. } => EmitSampler::Poisson(
                g.iter().map(|&m| Poisson::new(m).expect("validated positive mean")).collect(),
            ),
            Emission::Categorical { b } => EmitSampler::Categorical((0..s).map(|i| cdf(b.row(i))).collect()),
        };
        Self {
            initial_cdf: cdf(&model.pi0),
            row_cdf: (0..s).map(|i| cdf(model.p.row(i))).collect(),
            emit,
        }
    }

    pub fn initial(&self, rng: &mut SimRng) -> usize {
        draw(&self.initial_cdf, rng)
    }

    pub fn step(&self, state: usize, rng: &mut SimRng) -> usize {
        draw(&self.row_cdf[state], rng)
    }

    pub fn emit(&self, state: usize, rng: &mut SimRng) -> Observation {
        match &self.emit {
            EmitSampler::Poisson(d) => d[state].sample(rng) as Observation,
            EmitSampler::Categorical(c) => draw(&c[state], rng) as Observation,
        }
    }
}

/// A point of the belief simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("belief must have at least one entry".into()));
        }
        if probs.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Domain("belief entries must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > BELIEF_TOL {
            return Err(Error::Domain(format!("belief sums to {total}, expected 1")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights into a belief.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 || weights.iter().any(|&x| x < 0.0) {
            return Err(Error::Domain("weights must be nonnegative with positive sum".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(states: usize) -> Self {
        Self(vec![1.0 / states as f64; states])
    }

    /// Unit vector `e_{index+1}`.
    pub fn vertex(states: usize, index: usize) -> Self {
        let mut v = vec![0.0; states];
        v[index] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Self {
        b.0
    }
}

/// Totally positive of order two: every 2x2 minor is nonnegative (slack `1e-12`).
pub fn is_tp2(m: &Matrix) -> bool {
    tp2_violation(m).is_none()
}

/// First violating minor `(i1, i2, j1, j2)` with `i1 < i2`, `j1 < j2`, if any.
pub fn tp2_violation(m: &Matrix) -> Option<(usize, usize, usize, usize)> {
    let (r, c) = (m.rows(), m.cols());
    for i1 in 0..r {
        for i2 in i1 + 1..r {
            for j1 in 0..c {
                for j2 in j1 + 1..c {
                    let minor = m[(i1, j1)] * m[(i2, j2)] - m[(i1, j2)] * m[(i2, j1)];
                    if minor < -ORDER_TOL {
                        return Some((i1, i2, j1, j2));
                    }
                }
            }
        }
    }
    None
}

/// MLR dominance `p1 >=_r p2`: `p1(j) p2(i) <= p2(j) p1(i)` for all `i < j`.
pub fn mlr_geq(p1: &[f64], p2: &[f64]) -> bool {
    debug_assert_eq!(p1.len(), p2.len());
    let n = p1.len();
    for i in 0..n {
        for j in i + 1..n {
            if p1[j] * p2[i] > p2[j] * p1[i] + ORDER_TOL {
                return false;
            }
        }
    }
    true
}

/// First-order dominance `p1 >=_s p2`: every upper tail of `p1` is at most that of `p2`.
pub fn fosd_geq(p1: &[f64], p2: &[f64]) -> bool {
    debug_assert_eq!(p1.len(), p2.len());
    let (mut t1, mut t2) = (0.0, 0.0);
    for j in (0..p1.len()).rev() {
        t1 += p1[j];
        t2 += p2[j];
        if t1 > t2 + ORDER_TOL {
            return false;
        }
    }
    true
}

/// Endpoint of a line segment in the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineEnd {
    /// `e_1`, the most engaged vertex; `pibar` must have `pibar[0] = 0`.
    First,
    /// `e_S`; `pibar` must have `pibar[S-1] = 0`.
    Last,
}

/// `(1 - gamma) * pibar + gamma * endpoint`.
pub fn line_point(end: LineEnd, pibar: &Belief, gamma: f64) -> Result<Belief> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma {gamma} outside [0, 1]")));
    }
    let s = pibar.len();
    let idx = match end {
        LineEnd::First => 0,
        LineEnd::Last => s - 1,
    };
    if pibar[idx].abs() > ORDER_TOL {
        return Err(Error::Domain(format!(
            "pibar must vanish at state {} to lie on the opposite face",
            idx + 1
        )));
    }
    let mut v: Vec<f64> = pibar.as_slice().iter().map(|x| (1.0 - gamma) * x).collect();
    v[idx] += gamma;
    Ok(Belief(v))
}

/// Serialized form of an [`HmmModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "P")]
    pub p: Matrix,
    pub pi0: Vec<f64>,
    pub emission: EmissionDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmissionDoc {
    Poisson { g: Vec<f64> },
    Categorical {
        #[serde(rename = "B")]
        b: Matrix,
    },
}

impl TryFrom<ModelDoc> for HmmModel {
    type Error = Error;
    fn try_from(doc: ModelDoc) -> Result<Self> {
        if doc.states != doc.pi0.len() {
            return Err(Error::InvalidModel(format!(
                "S = {} but pi0 has {} entries",
                doc.states,
                doc.pi0.len()
            )));
        }
        let emission = match doc.emission {
            EmissionDoc::Poisson { g } => Emission::poisson(g),
            EmissionDoc::Categorical { b } => Emission::categorical(b),
        };
        HmmModel::new(doc.p, doc.pi0, emission)
    }
}

impl From<HmmModel> for ModelDoc {
    fn from(m: HmmModel) -> Self {
        let emission = match m.emission {
            Emission::Poisson { g, .. } => EmissionDoc::Poisson { g },
            Emission::Categorical { b } => EmissionDoc::Categorical { b },
        };
        ModelDoc { states: m.pi0.len(), p: m.p, pi0: m.pi0, emission }
    }
}

impl HmmModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> HmmModel {
        HmmModel::poisson(
            vec![vec![0.2, 0.1, 0.7], vec![0.1, 0.1, 0.8], vec![0.0, 0.1, 0.9]],
            vec![1.0 / 3.0; 3],
            vec![12.0, 7.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn poisson_zero_count() {
        let m = HmmModel::poisson(vec![vec![1.0]], vec![1.0], vec![2.0]).unwrap();
        assert!((m.obs_likelihood(0, 0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn poisson_pmf_matches_high_precision_value() {
        // 12^12 e^-12 / 12!, evaluated with 50-digit arithmetic.
        let expected = 0.114_367_915_509_446_53;
        let got = synthetic().obs_likelihood(0, 12).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got}");
    }

    #[test]
    fn synthetic_posterior_matches_high_precision_value() {
        // Posterior and normalizer for pi = uniform, y = 12, evaluated with 50-digit arithmetic.
        let expected = [0.812_693_346_035_802_2, 0.187_240_865_991_217_36, 0.000_065_787_972_980_407_78];
        let (post, sigma) = synthetic().belief_update(&Belief::uniform(3), 12).unwrap();
        for i in 0..3 {
            assert!((post[i] - expected[i]).abs() < 1e-13, "{i}: {}", post[i]);
        }
        assert!((sigma - 0.014_072_702_338_134_83).abs() < 1e-15);
    }

    #[test]
    fn categorical_lookup_and_range() {
        let m = HmmModel::categorical(
            vec![vec![1.0, 0.0], vec![0.1462, 0.8538]],
            vec![0.5, 0.5],
            vec![vec![0.1489, 0.4467, 0.4044], vec![0.3728, 0.5325, 0.0947]],
        )
        .unwrap();
        assert!((m.obs_likelihood(0, 1).unwrap() - 0.4467).abs() < 1e-15);
        assert!(matches!(m.obs_likelihood(0, 3), Err(Error::Domain(_))));
        assert!(matches!(m.obs_likelihood(2, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(HmmModel::poisson(vec![vec![0.5, 0.4], vec![0.5, 0.5]], vec![0.5, 0.5], vec![1.0, 2.0]).is_err());
        assert!(HmmModel::poisson(vec![vec![1.0]], vec![0.9], vec![1.0]).is_err());
        assert!(HmmModel::poisson(vec![vec![1.0]], vec![1.0], vec![0.0]).is_err());
        assert!(HmmModel::categorical(vec![vec![1.0]], vec![1.0], vec![vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn identity_chain_keeps_vertex() {
        let m = HmmModel::poisson(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![1.0, 0.0, 0.0],
            vec![12.0, 7.0, 2.0],
        )
        .unwrap();
        for y in [0, 3, 12, 40] {
            let (post, _) = m.belief_update(&Belief::vertex(3, 0), y).unwrap();
            assert_eq!(post.as_slice(), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn identical_rows_forget_prior() {
        let q = vec![0.5, 0.3, 0.2];
        let m = HmmModel::poisson(vec![q.clone(), q.clone(), q.clone()], q.clone(), vec![12.0, 7.0, 2.0]).unwrap();
        let y = 9;
        let w: Vec<f64> = (0..3).map(|i| q[i] * m.obs_likelihood(i, y).unwrap()).collect();
        let expected = Belief::from_weights(w).unwrap();
        for prior in [Belief::vertex(3, 0), Belief::vertex(3, 2), Belief::uniform(3)] {
            let (post, _) = m.belief_update(&prior, y).unwrap();
            for i in 0..3 {
                assert!((post[i] - expected[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let m = HmmModel::categorical(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let err = m.belief_update(&Belief::vertex(2, 0), 1).unwrap_err();
        assert!(matches!(err, Error::FilterDegenerate { observation: 1 }));
    }

    #[test]
    fn extreme_counts_do_not_overflow() {
        let m = HmmModel::poisson(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.5, 0.5], vec![1e4, 9e3]).unwrap();
        let (post, sigma) = m.belief_update(&Belief::uniform(2), 1_000_000).unwrap();
        assert!(post.as_slice().iter().all(|x| x.is_finite()));
        assert!((post.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(post[0] > 0.999);
        assert!(sigma.is_finite());
        let ln = m.obs_ln_likelihood(0, 1_000_000).unwrap();
        assert!(ln.is_finite() && ln < 0.0);
    }

    #[test]
    fn single_state_trajectory() {
        let m = HmmModel::poisson(vec![vec![1.0]], vec![1.0], vec![3.0]).unwrap();
        let t = m.sample_trajectory(50, 1);
        assert!(t.states.iter().all(|&s| s == 0));
        assert_eq!(t, m.sample_trajectory(50, 1));
    }

    #[test]
    fn empirical_transitions_match() {
        let m = synthetic();
        let sampler = m.sampler();
        let mut rng = rng_from_seed(42);
        for i in 0..3 {
            let mut counts = [0usize; 3];
            for _ in 0..100_000 {
                counts[sampler.step(i, &mut rng)] += 1;
            }
            for (j, &c) in counts.iter().enumerate() {
                let freq = c as f64 / 100_000.0;
                assert!((freq - m.transition()[(i, j)]).abs() < 0.01, "({i},{j}) {freq}");
            }
        }
        // along one long path the visited rows agree as well
        let t = m.sample_trajectory(100_000, 42);
        let mut counts = [[0usize; 3]; 3];
        for w in t.states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for (i, row) in counts.iter().enumerate() {
            let n: usize = row.iter().sum();
            for (j, &c) in row.iter().enumerate() {
                let sd = (m.transition()[(i, j)] * (1.0 - m.transition()[(i, j)]) / n as f64).sqrt();
                let freq = c as f64 / n as f64;
                assert!((freq - m.transition()[(i, j)]).abs() <= 4.0 * sd + 1e-12, "({i},{j}) {freq}");
            }
        }
    }

    #[test]
    fn tp2_examples() {
        assert!(is_tp2(&Matrix::identity(4)));
        assert!(is_tp2(synthetic().transition()));
        let swap = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(tp2_violation(&swap), Some((0, 1, 0, 1)));
    }

    #[test]
    fn order_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let a = [0.5, 0.3, 0.2];
        let b = [0.2, 0.3, 0.5];
        assert!(mlr_geq(&e1, &a));
        assert!(mlr_geq(&a, &a));
        assert!(mlr_geq(&a, &b));
        assert!(!mlr_geq(&b, &a));
        assert!(fosd_geq(&e1, &[0.0, 0.0, 1.0]));
        assert!(fosd_geq(&a, &a));
        assert!(fosd_geq(&a, &b));
    }

    #[test]
    fn line_points() {
        let pibar = Belief::new(vec![0.0, 0.5, 0.5]).unwrap();
        assert_eq!(line_point(LineEnd::First, &pibar, 1.0).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(line_point(LineEnd::First, &pibar, 0.0).unwrap(), pibar);
        let p = line_point(LineEnd::First, &pibar, 0.4).unwrap();
        for (x, e) in p.as_slice().iter().zip([0.4, 0.3, 0.3]) {
            assert!((x - e).abs() < 1e-15);
        }
        assert!(line_point(LineEnd::First, &Belief::uniform(3), 0.5).is_err());
        assert!(line_point(LineEnd::First, &pibar, 1.5).is_err());
        let hi = line_point(LineEnd::First, &pibar, 0.7).unwrap();
        assert!(mlr_geq(hi.as_slice(), p.as_slice()));
    }

    #[test]
    fn model_document_round_trip() {
        let m = synthetic().with_initial(vec![0.1, 0.2, 0.7]).unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"kind\": \"poisson\""));
        let back = HmmModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert!(HmmModel::from_json(r#"{"S":2,"P":[[1.0]],"pi0":[1.0],"emission":{"kind":"poisson","g":[1.0]}}"#).is_err());
    }
}
