use adstop::experiments::experiment;
use adstop::spsa::{gain_schedule, optimize, optimize_from, spsa_chain, spsa_gradient};
use adstop::{phi_to_theta, Error, PhiParams, SpsaConfig};

#[test]
fn gradient_is_exact_on_linear_objectives() {
    let w = [0.5, -2.0, 3.0];
    let f = |x: &[f64], _: u64| -> adstop::Result<f64> { Ok(x.iter().zip(&w).map(|(a, b)| a * b).sum()) };
    for seed in 0..20 {
        let g = spsa_gradient(f, &[1.0, 1.0, 1.0], 0.1, seed).unwrap();
        // Every component equals (omega . w) omega_i, so the sign pattern matches omega.
        let dot: f64 = g.iter().zip(&w).map(|(gi, wi)| gi.signum() * wi).sum();
        for gi in &g {
            assert!((gi.abs() - dot.abs()).abs() < 1e-12);
        }
    }
}

#[test]
fn chain_climbs_a_concave_bowl() {
    let f = |x: &[f64], _: u64| -> adstop::Result<f64> { Ok(-x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>()) };
    let cfg = SpsaConfig { iterations: 400, epsilon: 0.3, mu: 0.2, ..SpsaConfig::default() };
    let chain = spsa_chain(f, vec![-2.0, 3.0, 0.0, 4.0], &cfg, 1, 2).unwrap();
    let (first, last) = (chain.first().unwrap().1, chain.last().unwrap().1);
    assert!(last > first);
    assert!(last > -1e-2, "{last}");
}

#[test]
fn gains_decay() {
    let cfg = SpsaConfig::default();
    let (a0, c0) = gain_schedule(&cfg, 0);
    let (a1, c1) = gain_schedule(&cfg, 100);
    assert!((a0 - 0.6 * 11f64.powf(-0.602)).abs() < 1e-15);
    assert!((c0 - 1.0).abs() < 1e-15);
    assert!(a1 < a0 && c1 < c0);
}

#[test]
fn zero_iterations_return_the_start() {
    let problem = experiment("synthetic").unwrap().problem(0.9).unwrap();
    let start = PhiParams::new(3, vec![vec![0.3, 0.8]; 5]).unwrap();
    let cfg = SpsaConfig { iterations: 0, restarts: 1, batch: 50, horizon: 40, ..SpsaConfig::default() };
    let trace = optimize_from(&problem, &cfg, Some(&start)).unwrap();
    assert_eq!(trace.best_phi, start);
    assert_eq!(trace.best_theta, phi_to_theta(&start));
    assert_eq!(trace.points.len(), 1);

    let wrong = PhiParams::new(3, vec![vec![0.3, 0.8]; 2]).unwrap();
    assert!(matches!(optimize_from(&problem, &cfg, Some(&wrong)), Err(Error::Dimension { .. })));
}

#[test]
fn optimization_is_reproducible_and_improves_on_its_start() {
    let problem = experiment("synthetic").unwrap().problem(0.9).unwrap();
    let cfg = SpsaConfig { iterations: 30, restarts: 2, batch: 100, horizon: 60, seed: 4, ..SpsaConfig::default() };
    let a = optimize(&problem, &cfg).unwrap();
    let b = optimize(&problem, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 2 * 31);
    let start_best = a.points.iter().filter(|p| p.iteration == 0).map(|p| p.value).fold(f64::MIN, f64::max);
    assert!(a.best_value >= start_best);
    assert_eq!(a.refined.batch, 1000);
}
