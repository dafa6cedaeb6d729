//! Simultaneous perturbation stochastic approximation over threshold policies.
//!
//! The objective is the finite-horizon discounted reward of the linear
//! policy `phi_to_theta(phi)`, estimated by Monte Carlo and maximized by
//! gradient ascent with gains `a_n = eps (n + 1 + varsigma)^-kappa` and
//! perturbations `c_n = mu (n + 1)^-upsilon`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{check_mlr_constraints, check_subset_constraints, phi_to_theta, LinearThresholdPolicy, PhiParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sim::{evaluate_with, CompletionRule, Evaluation, Policy};
use crate::stopping::StopProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaConfig {
    pub epsilon: f64,
    pub varsigma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub upsilon: f64,
    /// Rollout horizon `N`.
    pub horizon: usize,
    /// Rollouts per objective evaluation.
    pub batch: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub completion: CompletionRule,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.6,
            varsigma: 10.0,
            kappa: 0.602,
            mu: 1.0,
            upsilon: 0.101,
            horizon: 200,
            batch: 500,
            iterations: 300,
            restarts: 10,
            seed: 0,
            completion: CompletionRule::Truncate,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::Domain(format!("kappa {} outside (0.5, 1]", self.kappa)));
        }
        for (name, v) in [("epsilon", self.epsilon), ("varsigma", self.varsigma), ("mu", self.mu), ("upsilon", self.upsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch == 0 || self.horizon == 0 || self.restarts == 0 {
            return Err(Error::Domain("batch, horizon and restarts must be positive".into()));
        }
        Ok(())
    }
}

/// `(a_n, c_n)`.
pub fn gain_schedule(config: &SpsaConfig, n: usize) -> (f64, f64) {
    let k = n as f64 + 1.0;
    (config.epsilon * (k + config.varsigma).powf(-config.kappa), config.mu * k.powf(-config.upsilon))
}

/// Two-sided simultaneous perturbation estimate along a random `+-1` direction.
/// Both evaluations receive the same seed.
pub fn spsa_gradient<F>(objective: F, phi: &[f64], c: f64, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], u64) -> Result<f64>,
{
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let omega: Vec<f64> = phi.iter().map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let eval_seed = derive_seed(seed, 1);
    let plus: Vec<f64> = phi.iter().zip(&omega).map(|(p, w)| p + c * w).collect();
    let minus: Vec<f64> = phi.iter().zip(&omega).map(|(p, w)| p - c * w).collect();
    let diff = objective(&plus, eval_seed)? - objective(&minus, eval_seed)?;
    Ok(omega.iter().map(|w| diff / (2.0 * c) * w).collect())
}

/// Ascent step `phi + a g`.
pub fn spsa_step(phi: &[f64], gradient: &[f64], a: f64) -> Vec<f64> {
    phi.iter().zip(gradient).map(|(p, g)| p + a * g).collect()
}

/// One SPSA chain. Returns `(phi_n, J(phi_n))` for `n = 0..=iterations`, where
/// every `J` uses `eval_seed` so the values are comparable across iterates.
pub fn spsa_chain<F>(objective: F, phi0: Vec<f64>, config: &SpsaConfig, seed: u64, eval_seed: u64) -> Result<Vec<(Vec<f64>, f64)>>
where
    F: Fn(&[f64], u64) -> Result<f64>,
{
    let mut phi = phi0;
    let mut out = Vec::with_capacity(config.iterations + 1);
    out.push((phi.clone(), objective(&phi, eval_seed)?));
    for n in 0..config.iterations {
        let (a, c) = gain_schedule(config, n);
        let g = spsa_gradient(&objective, &phi, c, derive_seed(seed, n as u64))?;
        phi = spsa_step(&phi, &g, a);
        out.push((phi.clone(), objective(&phi, eval_seed)?));
    }
    Ok(out)
}

/// Monte Carlo estimate of the finite-horizon discounted reward of `policy`.
pub fn estimate_reward(
    problem: &StopProblem,
    policy: &LinearThresholdPolicy,
    horizon: usize,
    batch: usize,
    seed: u64,
    rule: CompletionRule,
) -> Result<f64> {
    Ok(evaluate_with(problem, Policy::Linear(policy), horizon, batch, seed, rule)?.mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub restart: usize,
    pub iteration: usize,
    /// Estimated reward of `phi` on the fixed evaluation seed.
    pub value: f64,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub points: Vec<TracePoint>,
    pub best_phi: PhiParams,
    pub best_theta: LinearThresholdPolicy,
    /// Largest traced value.
    pub best_value: f64,
    /// Re-evaluation of the best policy with ten times the batch.
    pub refined: Evaluation,
}

impl OptimizationTrace {
    /// `iteration, restart, J_N, phi_1..phi_K`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.points.first().map_or(0, |p| p.phi.len());
        let mut header: Vec<String> = ["iteration", "restart", "J_N"].map(String::from).to_vec();
        header.extend((1..=k).map(|i| format!("phi_{i}")));
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec = vec![p.iteration.to_string(), p.restart.to_string(), p.value.to_string()];
            rec.extend(p.phi.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initial `phi` for a restart: angles uniform on `[0, pi/2]`, magnitudes on `[0, 2]`.
pub fn initial_phi(states: usize, stops: usize, seed: u64) -> PhiParams {
    let mut rng = rng_from_seed(seed);
    let template = PhiParams::zeros(states, stops);
    let rows = (1..=stops)
        .map(|l| (0..states - 1).map(|i| rng.random::<f64>() * template.slot_range(l, i)).collect())
        .collect();
    PhiParams::new(states, rows).expect("finite draws")
}

fn assert_feasible(policy: &LinearThresholdPolicy) -> Result<()> {
    let mut v = check_mlr_constraints(policy).violations;
    v.extend(check_subset_constraints(policy).violations);
    match v.first() {
        Some(first) => Err(Error::InfeasiblePolicy(first.to_string())),
        None => Ok(()),
    }
}

/// Multi-restart SPSA over linear threshold policies.
///
/// The objective is scaled by `L max|r|` so the default gains suit any reward unit.
pub fn optimize(problem: &StopProblem, config: &SpsaConfig) -> Result<OptimizationTrace> {
    optimize_from(problem, config, None)
}

/// As [`optimize`], with restart 0 started from `start` instead of a random draw.
pub fn optimize_from(problem: &StopProblem, config: &SpsaConfig, start: Option<&PhiParams>) -> Result<OptimizationTrace> {
    config.validate()?;
    let s = problem.states();
    if s < 2 {
        return Err(Error::Domain("threshold policies need at least two states".into()));
    }
    let big_l = problem.stops();
    if let Some(phi) = start {
        if phi.states() != s {
            return Err(Error::Dimension { expected: s, got: phi.states() });
        }
        if phi.stops() != big_l {
            return Err(Error::Dimension { expected: big_l, got: phi.stops() });
        }
    }
    let scale = (big_l as f64 * problem.reward_scale()).max(f64::MIN_POSITIVE);
    let objective = |flat: &[f64], seed: u64| -> Result<f64> {
        let phi = PhiParams::from_flat(s, big_l, flat)?;
        let theta = phi_to_theta(&phi);
        assert_feasible(&theta)?;
        Ok(estimate_reward(problem, &theta, config.horizon, config.batch, seed, config.completion)? / scale)
    };
    let eval_seed = derive_seed(config.seed, u64::MAX);
    let chains: Vec<Vec<(Vec<f64>, f64)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let restart_seed = derive_seed(config.seed, r as u64);
            let phi0 = match start {
                Some(phi) if r == 0 => phi.to_flat(),
                _ => initial_phi(s, big_l, derive_seed(restart_seed, u64::MAX)).to_flat(),
            };
            spsa_chain(objective, phi0, config, restart_seed, eval_seed)
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (r, chain) in chains.into_iter().enumerate() {
        for (n, (phi, value)) in chain.into_iter().enumerate() {
            points.push(TracePoint { restart: r, iteration: n, value: value * scale, phi });
        }
    }
    let best = points
        .iter()
        .fold(&points[0], |b, p| if p.value > b.value { p } else { b });
    let best_phi = PhiParams::from_flat(s, big_l, &best.phi)?;
    let best_theta = phi_to_theta(&best_phi);
    let best_value = best.value;
    let refined = evaluate_with(
        problem,
        Policy::Linear(&best_theta),
        config.horizon,
        config.batch * 10,
        derive_seed(config.seed, u64::MAX - 1),
        config.completion,
    )?;
    Ok(OptimizationTrace { points, best_phi, best_theta, best_value, refined })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_examples() {
        let cfg = SpsaConfig { epsilon: 1.0, varsigma: 1e-300, kappa: 1.0, ..SpsaConfig::default() };
        assert!((gain_schedule(&cfg, 0).0 - 1.0).abs() < 1e-12);
        let cfg = SpsaConfig { mu: 1.0, upsilon: 0.5, ..SpsaConfig::default() };
        assert!((gain_schedule(&cfg, 3).1 - 0.5).abs() < 1e-15);
        let cfg = SpsaConfig::default();
        for n in 0..10_000 {
            let (a0, c0) = gain_schedule(&cfg, n);
            let (a1, c1) = gain_schedule(&cfg, n + 1);
            assert!(a1 < a0 && c1 < c0);
        }
    }

    #[test]
    fn step_examples() {
        assert_eq!(spsa_step(&[0.0], &[2.0], 0.5), vec![1.0]);
        assert_eq!(spsa_step(&[0.3, 0.4], &[0.0, 0.0], 0.5), vec![0.3, 0.4]);
        assert_eq!(spsa_step(&[0.3, 0.4], &[1.0, 2.0], 0.0), vec![0.3, 0.4]);
    }

    #[test]
    fn constant_and_linear_objectives() {
        let g = spsa_gradient(|_, _| Ok(3.0), &[1.0, 2.0, 3.0], 0.1, 5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        for seed in 0..20 {
            let g = spsa_gradient(|p, _| Ok(2.5 * p[0]), &[0.7], 0.1, seed).unwrap();
            assert!((g[0] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_matches_finite_difference() {
        // phi = (1, 1), c = 0.1: omega = +-(1, 1) gives (2.42 - 1.62) / 0.2 = 4 times
        // omega times omega, i.e. (4, 4); omega = +-(1, -1) gives 0.
        let f = |p: &[f64], _| Ok(p.iter().map(|x| x * x).sum::<f64>());
        let (mut aligned, mut crossed) = (0, 0);
        for seed in 0..64 {
            let g = spsa_gradient(f, &[1.0, 1.0], 0.1, seed).unwrap();
            if g.iter().all(|x| (x - 4.0).abs() < 1e-9) {
                aligned += 1;
            } else {
                assert!(g.iter().all(|x| x.abs() < 1e-9), "{g:?}");
                crossed += 1;
            }
        }
        assert!(aligned > 0 && crossed > 0);
    }
}
