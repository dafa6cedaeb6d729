use adstop::experiments::experiment;
use adstop::rng::{derive_seed, rng_from_seed};
use adstop::sim::{compare, evaluate, periodic_slots, random_slots, rollout, rollout_totals, Policy};
use adstop::stopping::{solve, SolverConfig};
use adstop::{Belief, HmmModel, LinearThresholdPolicy, StopProblem};

fn small_categorical() -> (StopProblem, LinearThresholdPolicy) {
    let model = HmmModel::categorical(
        vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.3, 0.6]],
        vec![0.3, 0.3, 0.4],
        vec![vec![0.8, 0.2], vec![0.5, 0.5], vec![0.15, 0.85]],
    )
    .unwrap();
    let problem = StopProblem::new(model, vec![6.0, 3.0, 1.0], 2, 0.9).unwrap();
    let policy = LinearThresholdPolicy::feasible(3, vec![vec![1.5, 0.75], vec![1.2, 0.75]]).unwrap();
    (problem, policy)
}

/// Exact expected total by enumerating every state and observation path.
fn enumerate(problem: &StopProblem, policy: &LinearThresholdPolicy, horizon: usize) -> f64 {
    fn go(
        problem: &StopProblem,
        policy: &LinearThresholdPolicy,
        horizon: usize,
        t: usize,
        x: usize,
        belief: &Belief,
        left: usize,
    ) -> f64 {
        let model = problem.model();
        let mut value = 0.0;
        let mut left_after = left;
        if policy.decide(left, belief.as_slice()).unwrap().is_stop() {
            value += problem.discount().powi(t as i32) * problem.reward(left)[x];
            left_after -= 1;
            if left_after == 0 {
                return value;
            }
        }
        if t + 1 == horizon {
            return value;
        }
        let p = model.transition();
        for next in 0..model.states() {
            for y in 0..2u32 {
                let w = p[(x, next)] * model.obs_likelihood(next, y).unwrap();
                if w == 0.0 {
                    continue;
                }
                let (post, _) = model.belief_update(belief, y).unwrap();
                value += w * go(problem, policy, horizon, t + 1, next, &post, left_after);
            }
        }
        value
    }
    let model = problem.model();
    let pi0 = model.initial_belief();
    (0..model.states()).map(|x| model.initial()[x] * go(problem, policy, horizon, 0, x, &pi0, problem.stops())).sum()
}

#[test]
fn monte_carlo_matches_path_enumeration() {
    let (problem, policy) = small_categorical();
    let exact = enumerate(&problem, &policy, 4);
    assert!(exact > 1.0, "policy never stops");
    let est = evaluate(&problem, Policy::Linear(&policy), 4, 200_000, 31).unwrap();
    assert!((est.mean - exact).abs() < 4.0 * est.stderr, "mc {} +- {} vs exact {exact}", est.mean, est.stderr);
    assert!(est.stderr < 0.02);
}

#[test]
fn single_state_chain_collects_every_reward() {
    let model = HmmModel::poisson(vec![vec![1.0]], vec![1.0], vec![3.0]).unwrap();
    let problem = StopProblem::new(model, vec![2.5], 4, 1.0).unwrap();
    for policy in [Policy::Periodic, Policy::Random { seed: 5 }] {
        let est = evaluate(&problem, policy, 50, 100, 1).unwrap();
        assert!((est.mean - 10.0).abs() < 1e-12);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.completed, 100);
    }
}

#[test]
fn same_policy_twice_has_ratio_one() {
    let (problem, policy) = small_categorical();
    let named = vec![("a".to_string(), Policy::Linear(&policy)), ("b".to_string(), Policy::Linear(&policy))];
    let report = compare(&problem, &named, 30, 500, 9).unwrap();
    assert_eq!(report.ratio("a", "b"), Some(1.0));
}

#[test]
fn schedules_place_all_stops() {
    let problem = experiment("synthetic").unwrap().problem(0.9).unwrap();
    let big_l = problem.stops();
    for seed in 0..20 {
        let r = rollout(&problem, Policy::Periodic, 100, seed).unwrap();
        assert_eq!(r.stop_times, periodic_slots(100, big_l));
        let r = rollout(&problem, Policy::Random { seed: 3 }, 100, seed).unwrap();
        assert_eq!(r.stop_times.len(), big_l);
        assert!(r.stop_times.windows(2).all(|w| w[0] < w[1]));
        assert!(r.stop_times.iter().all(|&t| t < 100));
    }
    let mut rng = rng_from_seed(1);
    assert_eq!(random_slots(3, 5, &mut rng), vec![0, 1, 2]);
}

#[test]
fn totals_follow_from_the_stop_list() {
    let (problem, policy) = small_categorical();
    let rho = problem.discount();
    for p in [Policy::Linear(&policy), Policy::Periodic, Policy::Random { seed: 2 }] {
        for r in rollout_totals(&problem, p, 25, 200, 77).unwrap() {
            let mut total = 0.0;
            for (k, (&t, &x)) in r.stop_times.iter().zip(&r.stop_states).enumerate() {
                let reward = problem.reward(problem.stops() - k)[x];
                assert_eq!(reward, r.rewards[k]);
                total += rho.powi(t as i32) * reward;
            }
            assert!((total - r.total).abs() < 1e-12);
        }
    }
}

#[test]
fn larger_batches_shrink_the_standard_error() {
    let (problem, policy) = small_categorical();
    let small = evaluate(&problem, Policy::Linear(&policy), 30, 2_000, derive_seed(5, 0)).unwrap();
    let large = evaluate(&problem, Policy::Linear(&policy), 30, 20_000, derive_seed(5, 1)).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio - 10f64.sqrt()).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn grid_policy_is_not_beaten_by_a_threshold_policy() {
    let problem = experiment("synthetic").unwrap().problem(0.9).unwrap();
    let sol = solve(&problem, Some(60), &SolverConfig::default()).unwrap();
    let linear = LinearThresholdPolicy::feasible(3, vec![vec![1.0, 0.4]; problem.stops()]).unwrap();
    let named = vec![("griddp".to_string(), Policy::GridDp(&sol)), ("linear".to_string(), Policy::Linear(&linear))];
    let report = compare(&problem, &named, 200, 4_000, 13).unwrap();
    let (g, l) = (report.score("griddp").unwrap(), report.score("linear").unwrap());
    assert!(g.mean >= l.mean - 2.0 * l.stderr, "griddp {g:?} linear {l:?}");
}

#[test]
fn evaluation_is_reproducible() {
    let (problem, policy) = small_categorical();
    let a = evaluate(&problem, Policy::Linear(&policy), 40, 300, 8).unwrap();
    let b = evaluate(&problem, Policy::Linear(&policy), 40, 300, 8).unwrap();
    assert_eq!(a, b);
}
