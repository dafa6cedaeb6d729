use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adstop::em::{pseudo_residuals, quantize, select_model, EmConfig};
use adstop::experiments::experiment;
use adstop::policy::PolicyDoc;
use adstop::rng::derive_seed;
use adstop::sim::{compare, detect_change, regime_switch_series, rollout_trace, write_trace_csv, DetectConfig};
use adstop::spsa::{optimize_from, SpsaConfig};
use adstop::stopping::{solve, verify_monotone_value, verify_nested, verify_threshold_on_lines, MAX_DP_STATES};
use adstop::{GridSolution, HmmModel, LinearThresholdPolicy, PhiParams, Policy, SolverConfig, StopProblem};

use crate::config::{load_series, read_file, FitSection, RunConfig, DEFAULT_COMPARE_BATCH};
use crate::failure::{Failure, Outcome};
use crate::{Cli, Command, ProblemArgs};

/// Discount used by `detect` when none is configured.
const DEFAULT_DETECT_RHO: f64 = 0.998;
/// Regime switch position and length of the series simulated by `experiment buzz-change`.
const SWITCH_AT: usize = 20;
const SERIES_LEN: usize = 120;

pub fn run(cli: Cli) -> Outcome<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.sim.seed = cli.seed;
    }
    if cli.out_dir.is_some() {
        cfg.output_dir = cli.out_dir.clone();
    }
    let force = cli.force;
    match cli.command {
        Command::Fit { input, states, restarts } => {
            if let Some(input) = input {
                let states = states.clone().or_else(|| cfg.fit.as_ref().and_then(|f| f.states.clone()));
                cfg.fit = Some(FitSection { input, states });
            } else if let (Some(f), Some(s)) = (cfg.fit.as_mut(), states) {
                f.states = Some(s);
            }
            cmd_fit(&cfg, restarts)
        }
        Command::Solve { problem, resolution, tol } => {
            apply_problem_args(&mut cfg, problem);
            if resolution.is_some() {
                cfg.grid.resolution = resolution;
            }
            if tol.is_some() {
                cfg.grid.tol = tol;
            }
            cmd_solve(&cfg, force)
        }
        Command::Optimize { problem, iterations, restarts, batch, horizon, warm_start } => {
            apply_problem_args(&mut cfg, problem);
            cfg.spsa.iterations = iterations.or(cfg.spsa.iterations);
            cfg.spsa.restarts = restarts.or(cfg.spsa.restarts);
            cfg.spsa.batch = batch.or(cfg.spsa.batch);
            cfg.sim.horizon = horizon.or(cfg.sim.horizon);
            cmd_optimize(&cfg, warm_start.as_deref())
        }
        Command::Compare { problem, policies, dp, batch, horizon, resolution } => {
            apply_problem_args(&mut cfg, problem);
            cfg.sim.batch = batch.or(cfg.sim.batch);
            cfg.sim.horizon = horizon.or(cfg.sim.horizon);
            cfg.grid.resolution = resolution.or(cfg.grid.resolution);
            cmd_compare(&cfg, &policies, dp, force)
        }
        Command::Detect { model, experiment, input, reward, rho, levels, resolution } => {
            if model.is_some() || experiment.is_some() {
                clear_model_source(&mut cfg);
                cfg.model_file = model;
                cfg.experiment = experiment;
            }
            cfg.reward = reward.or(cfg.reward.take());
            cfg.rho = rho.or(cfg.rho);
            cfg.grid.resolution = resolution.or(cfg.grid.resolution);
            cmd_detect(&cfg, &input, levels)
        }
        Command::Experiment { name, batch, iterations, restarts } => {
            clear_model_source(&mut cfg);
            cfg.experiment = Some(name);
            cfg.sim.batch = batch.or(cfg.sim.batch);
            cfg.spsa.iterations = iterations.or(cfg.spsa.iterations);
            cfg.spsa.restarts = restarts.or(cfg.spsa.restarts);
            cmd_experiment(&cfg, force)
        }
    }
}

fn clear_model_source(cfg: &mut RunConfig) {
    cfg.experiment = None;
    cfg.model = None;
    cfg.model_file = None;
    cfg.fit = None;
}

fn apply_problem_args(cfg: &mut RunConfig, args: ProblemArgs) {
    if args.experiment.is_some() || args.model.is_some() || args.fit_input.is_some() {
        clear_model_source(cfg);
        cfg.experiment = args.experiment;
        cfg.model_file = args.model;
        cfg.fit = args.fit_input.map(|input| FitSection { input, states: None });
    }
    if args.reward.is_some() || args.alpha.is_some() {
        cfg.reward = args.reward;
        cfg.alpha = args.alpha;
    }
    cfg.stops = args.stops.or(cfg.stops);
    cfg.rho = args.rho.or(cfg.rho);
}

fn output_dir(cfg: &RunConfig) -> Outcome<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Outcome<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Outcome<()> {
    let mut w = create(dir, name)?;
    writeln!(w, "{text}").map_err(|e| Failure::usage(format!("cannot write {name}: {e}")))?;
    w.flush().map_err(|e| Failure::usage(format!("cannot write {name}: {e}")))
}

fn solver_config(cfg: &RunConfig, force: bool) -> SolverConfig {
    let d = SolverConfig::default();
    SolverConfig {
        tol: cfg.grid.tol.unwrap_or(d.tol),
        max_iters: cfg.grid.max_iters.unwrap_or(d.max_iters),
        force,
        ..d
    }
}

fn cmd_fit(cfg: &RunConfig, restarts: Option<usize>) -> Outcome<()> {
    let fit = cfg.fit.as_ref().ok_or_else(|| Failure::usage("fit needs --input or a `fit` section"))?;
    let series = load_series(&fit.input)?;
    let states = fit.states.clone().unwrap_or_else(|| (1..=6).collect());
    let em = EmConfig { restarts: restarts.unwrap_or(cfg.em().restarts), ..cfg.em() };
    let selection = select_model(&series, &states, &em)?;
    let dir = output_dir(cfg)?;
    write_text(&dir, "model.json", &selection.best.model.to_json()?)?;
    selection.write_scores_csv(create(&dir, "scores.csv")?)?;
    let residuals = pseudo_residuals(&selection.best.model, series.counts())?;
    residuals.write_qq_csv(create(&dir, "qq.csv")?)?;

    println!("{:>3} {:>16} {:>16} {:>16}", "S", "loglik", "AIC", "BIC");
    for r in &selection.scores {
        println!("{:>3} {:>16.3} {:>16.3} {:>16.3}", r.states, r.loglik, r.aic, r.bic);
    }
    let best = &selection.best;
    println!("selected S = {} ({} EM iterations, converged: {})", best.model.states(), best.iterations, best.converged);
    if best.rank_deficient {
        println!("warning: the series is constant; extra states are not identifiable");
    }
    let outliers = residuals.outliers();
    if !outliers.is_empty() {
        println!("warning: {} observations have zero predictive probability", outliers.len());
    }
    Ok(())
}

fn report_solution(sol: &GridSolution) {
    print!("{}", sol.assumptions());
    println!(
        "value iteration: {} iterations, residual {:.3e}, converged: {}",
        sol.iterations(),
        sol.residual(),
        sol.converged()
    );
    if !sol.converged() {
        println!("warning: value iteration stopped before reaching the tolerance");
    }
    for l in 1..=sol.stops() {
        let n = sol.stop_set(l).iter().filter(|&&s| s).count();
        println!("l = {l}: {n} of {} grid points in the stopping set", sol.grid().len());
    }
}

fn solve_problem(cfg: &RunConfig, problem: &StopProblem, force: bool) -> Outcome<GridSolution> {
    Ok(solve(problem, cfg.grid.resolution, &solver_config(cfg, force))?)
}

fn cmd_solve(cfg: &RunConfig, force: bool) -> Outcome<()> {
    let problem = cfg.problem()?;
    let sol = solve_problem(cfg, &problem, force)?;
    let dir = output_dir(cfg)?;
    write_solution(&dir, &sol)?;
    report_solution(&sol);
    let nested = verify_nested(&sol);
    let lines = verify_threshold_on_lines(&sol);
    let mono = verify_monotone_value(&sol);
    println!("nested stopping sets: {} violations", nested.violations.len());
    println!(
        "single switch on lines: {} violations over {} e_1 lines and {} e_S lines",
        lines.violations.len(),
        lines.first_lines,
        lines.last_lines
    );
    println!(
        "monotone value: {} V and {} W violations over {} comparable pairs",
        mono.value_violations, mono.w_violations, mono.comparable_pairs
    );
    Ok(())
}

fn write_solution(dir: &Path, sol: &GridSolution) -> Outcome<()> {
    sol.write_csv(create(dir, "solution.csv")?)?;
    for l in 1..=sol.stops() {
        sol.write_stop_set_csv(l, create(dir, &format!("stop_set_l{l}.csv"))?)?;
    }
    Ok(())
}

fn load_policy(path: &Path) -> Outcome<PolicyDoc> {
    let text = read_file(path)?;
    PolicyDoc::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn run_optimize(problem: &StopProblem, spsa: &SpsaConfig, start: Option<&PhiParams>, dir: &Path) -> Outcome<LinearThresholdPolicy> {
    let trace = optimize_from(problem, spsa, start)?;
    let doc = PolicyDoc::new(&trace.best_theta, Some(&trace.best_phi));
    write_text(dir, "policy.json", &doc.to_json()?)?;
    trace.write_csv(create(dir, "trace.csv")?)?;
    println!(
        "best traced reward {:.4}; re-evaluated over {} rollouts: {:.4} +- {:.4}",
        trace.best_value, trace.refined.batch, trace.refined.mean, trace.refined.stderr
    );
    Ok(trace.best_theta)
}

fn cmd_optimize(cfg: &RunConfig, warm_start: Option<&Path>) -> Outcome<()> {
    let problem = cfg.problem()?;
    let spsa = cfg.spsa()?;
    let start = match warm_start {
        None => None,
        Some(path) => {
            let doc = load_policy(path)?;
            let phi = doc
                .phi
                .ok_or_else(|| Failure::usage(format!("{}: warm start needs `phi`", path.display())))?;
            Some(PhiParams::new(doc.states, phi).map_err(Failure::usage)?)
        }
    };
    let dir = output_dir(cfg)?;
    run_optimize(&problem, &spsa, start.as_ref(), &dir)?;
    Ok(())
}

fn policy_name(path: &Path, taken: &[String]) -> String {
    let stem = path.file_stem().map_or_else(|| "policy".to_string(), |s| s.to_string_lossy().into_owned());
    let mut name = stem.clone();
    let mut k = 2;
    while taken.contains(&name) {
        name = format!("{stem}#{k}");
        k += 1;
    }
    name
}

/// Compares `named` against the periodic and random baselines and writes the report.
fn run_compare(cfg: &RunConfig, problem: &StopProblem, named: Vec<(String, Policy<'_>)>, dir: &Path) -> Outcome<()> {
    let seed = cfg.seed();
    let mut policies = named;
    policies.push(("periodic".into(), Policy::Periodic));
    policies.push(("random".into(), Policy::Random { seed: derive_seed(seed, 1) }));
    let batch = cfg.sim.batch.unwrap_or(DEFAULT_COMPARE_BATCH);
    let report = compare(problem, &policies, cfg.horizon(), batch, seed)?;
    report.write_csv(create(dir, "compare.csv")?)?;
    report.write_bars_csv(create(dir, "bars.csv")?)?;
    println!("{:<16} {:>14} {:>12}", "policy", "mean", "stderr");
    for s in &report.scores {
        println!("{:<16} {:>14.4} {:>12.4}", s.policy, s.evaluation.mean, s.evaluation.stderr);
    }
    for (a, b, r) in report.ratios() {
        println!("{a}/{b} = {r:.4}");
    }
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, files: &[PathBuf], dp: bool, force: bool) -> Outcome<()> {
    let problem = cfg.problem()?;
    let dp = dp || (files.is_empty() && (problem.states() <= MAX_DP_STATES || force));
    if files.is_empty() && !dp {
        return Err(Failure::usage(format!(
            "nothing to compare: {} states is too many for the grid solver; pass --policy or --force",
            problem.states()
        )));
    }
    let solution = if dp { Some(solve_problem(cfg, &problem, force)?) } else { None };
    let mut linear = Vec::new();
    for f in files {
        let doc = load_policy(f)?;
        let policy = doc.policy()?;
        if policy.states() != problem.states() || policy.stops() < problem.stops() {
            return Err(Failure::usage(format!(
                "{}: policy has S = {}, L = {} but the problem has S = {}, L = {}",
                f.display(),
                policy.states(),
                policy.stops(),
                problem.states(),
                problem.stops()
            )));
        }
        linear.push((f.clone(), policy));
    }
    let mut named: Vec<(String, Policy<'_>)> = Vec::new();
    if let Some(sol) = &solution {
        named.push(("griddp".into(), Policy::GridDp(sol)));
    }
    for (path, policy) in &linear {
        let taken: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
        named.push((policy_name(path, &taken), Policy::Linear(policy)));
    }
    let dir = output_dir(cfg)?;
    run_compare(cfg, &problem, named, &dir)
}

fn detection_inputs(cfg: &RunConfig) -> Outcome<(HmmModel, Vec<f64>, f64)> {
    let resolved = cfg.resolve_model()?;
    let reward = match (&cfg.reward, resolved.reward, resolved.model.emission().poisson_means()) {
        (Some(r), _, _) => r.clone(),
        (None, Some(r), _) => r,
        (None, None, Some(g)) => g.to_vec(),
        (None, None, None) => return Err(Failure::usage("categorical models need --reward")),
    };
    Ok((resolved.model, reward, cfg.rho.unwrap_or(DEFAULT_DETECT_RHO)))
}

fn run_detect(cfg: &RunConfig, model: &HmmModel, reward: &[f64], rho: f64, obs: &[u32], dir: &Path) -> Outcome<()> {
    let dc = DetectConfig {
        resolution: cfg.grid.resolution.unwrap_or(DetectConfig::default().resolution),
        solver: solver_config(cfg, false),
    };
    let det = detect_change(model, reward, obs, rho, &dc)?;
    det.write_belief_path_csv(obs, create(dir, "belief_path.csv")?)?;
    match det.stop_time {
        Some(k) => println!("detection: {k} (after {k} of {} observations)", obs.len()),
        None => println!("detection: none ({} observations)", obs.len()),
    }
    Ok(())
}

fn cmd_detect(cfg: &RunConfig, input: &Path, levels: Option<usize>) -> Outcome<()> {
    let (model, reward, rho) = detection_inputs(cfg)?;
    let series = load_series(input)?;
    let obs = match levels {
        Some(m) => quantize(series.counts(), m)?,
        None => series.counts().to_vec(),
    };
    let dir = output_dir(cfg)?;
    run_detect(cfg, &model, &reward, rho, &obs, &dir)
}

fn cmd_experiment(cfg: &RunConfig, force: bool) -> Outcome<()> {
    let name = cfg.experiment.clone().unwrap_or_default();
    let exp = experiment(&name).map_err(Failure::usage)?;
    let dir = output_dir(cfg)?;
    let model = exp.model()?;
    write_text(&dir, "model.json", &model.to_json()?)?;
    println!("experiment {name}: S = {}, L = {}", model.states(), exp.stops);

    if name == "buzz-change" {
        let (model, reward, rho) = detection_inputs(cfg)?;
        let obs = regime_switch_series(&model, 1, 0, SWITCH_AT, SERIES_LEN, cfg.seed())?;
        let mut w = csv::Writer::from_writer(create(&dir, "series.csv")?);
        w.write_record(["observation"]).map_err(Failure::usage)?;
        for y in &obs {
            w.write_record([y.to_string()]).map_err(Failure::usage)?;
        }
        w.flush().map_err(Failure::usage)?;
        println!("simulated {SERIES_LEN} symbols switching to the high state at t = {SWITCH_AT}");
        return run_detect(cfg, &model, &reward, rho, &obs, &dir);
    }

    let problem = cfg.problem()?;
    if problem.states() <= MAX_DP_STATES || force {
        let sol = solve_problem(cfg, &problem, force)?;
        write_solution(&dir, &sol)?;
        report_solution(&sol);
        let (_, steps) = rollout_trace(&problem, Policy::GridDp(&sol), cfg.horizon(), cfg.seed())?;
        write_trace_csv(&steps, create(&dir, "rollout.csv")?)?;
        run_compare(cfg, &problem, vec![("griddp".into(), Policy::GridDp(&sol))], &dir)
    } else {
        let policy = run_optimize(&problem, &cfg.spsa()?, None, &dir)?;
        let (_, steps) = rollout_trace(&problem, Policy::Linear(&policy), cfg.horizon(), cfg.seed())?;
        write_trace_csv(&steps, create(&dir, "rollout.csv")?)?;
        run_compare(cfg, &problem, vec![("linear".into(), Policy::Linear(&policy))], &dir)
    }
}
