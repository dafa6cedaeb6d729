//! Run configuration document and model resolution.
//!
//! Values come from three layers: built-in defaults, the `--config` JSON
//! document, then command-line flags. Later layers win.

use std::path::{Path, PathBuf};

use adstop::em::{select_model, EmConfig};
use adstop::experiments::experiment;
use adstop::spsa::SpsaConfig;
use adstop::{CompletionRule, CountSeries, HmmModel, StopProblem};
use serde::Deserialize;

use crate::failure::{Failure, Outcome};

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_STOPS: usize = 5;
pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_COMPARE_BATCH: usize = 10_000;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub input: PathBuf,
    #[serde(default)]
    pub states: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "M")]
    pub resolution: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpsaSection {
    pub epsilon: Option<f64>,
    pub varsigma: Option<f64>,
    pub kappa: Option<f64>,
    pub mu: Option<f64>,
    pub upsilon: Option<f64>,
    pub batch: Option<usize>,
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    /// `"truncate"` or `"discard"`.
    pub completion: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(rename = "N")]
    pub horizon: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
}

/// The JSON configuration document.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<String>,
    pub model: Option<serde_json::Value>,
    pub model_file: Option<PathBuf>,
    pub fit: Option<FitSection>,
    pub reward: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    #[serde(rename = "L")]
    pub stops: Option<usize>,
    pub rho: Option<f64>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub spsa: SpsaSection,
    #[serde(default)]
    pub sim: SimSection,
    pub output_dir: Option<PathBuf>,
}

pub fn read_file(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

impl RunConfig {
    /// Parses the document and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Outcome<Self> {
        let text = read_file(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.model_file.as_mut() {
            resolve(p);
        }
        if let Some(f) = cfg.fit.as_mut() {
            resolve(&mut f.input);
        }
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Exactly one model source, and every referenced file exists.
    pub fn validate(&self) -> Outcome<()> {
        let sources = [self.experiment.is_some(), self.model.is_some(), self.model_file.is_some(), self.fit.is_some()];
        let n = sources.iter().filter(|&&s| s).count();
        if n > 1 {
            return Err(Failure::usage("give exactly one of experiment, model, model_file or fit"));
        }
        if self.reward.is_some() && self.alpha.is_some() {
            return Err(Failure::usage("give at most one of reward and alpha"));
        }
        for p in self.model_file.iter().chain(self.fit.as_ref().map(|f| &f.input)) {
            if !p.is_file() {
                return Err(Failure::usage(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.sim.horizon.unwrap_or(DEFAULT_HORIZON)
    }

    pub fn seed(&self) -> u64 {
        self.sim.seed.unwrap_or(0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn spsa(&self) -> Outcome<SpsaConfig> {
        let d = SpsaConfig::default();
        let s = &self.spsa;
        let completion = match s.completion.as_deref() {
            None | Some("truncate") => CompletionRule::Truncate,
            Some("discard") => CompletionRule::Discard,
            Some(other) => return Err(Failure::usage(format!("unknown completion rule `{other}`"))),
        };
        let cfg = SpsaConfig {
            epsilon: s.epsilon.unwrap_or(d.epsilon),
            varsigma: s.varsigma.unwrap_or(d.varsigma),
            kappa: s.kappa.unwrap_or(d.kappa),
            mu: s.mu.unwrap_or(d.mu),
            upsilon: s.upsilon.unwrap_or(d.upsilon),
            horizon: self.horizon(),
            batch: s.batch.unwrap_or(d.batch),
            iterations: s.iterations.unwrap_or(d.iterations),
            restarts: s.restarts.unwrap_or(d.restarts),
            seed: self.seed(),
            completion,
        };
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }

    pub fn em(&self) -> EmConfig {
        EmConfig { seed: self.seed(), ..EmConfig::default() }
    }

    /// The model and, for built-in experiments, its default reward and stop count.
    pub fn resolve_model(&self) -> Outcome<ResolvedModel> {
        self.validate()?;
        if let Some(name) = &self.experiment {
            let e = experiment(name).map_err(Failure::usage)?;
            return Ok(ResolvedModel { model: e.model()?, reward: Some(e.reward.clone()), stops: Some(e.stops) });
        }
        let model = if let Some(doc) = &self.model {
            serde_json::from_value::<HmmModel>(doc.clone()).map_err(|e| Failure::usage(format!("inline model: {e}")))?
        } else if let Some(path) = &self.model_file {
            load_model(path)?
        } else if let Some(fit) = &self.fit {
            let series = load_series(&fit.input)?;
            let states = fit.states.clone().unwrap_or_else(|| (1..=6).collect());
            select_model(&series, &states, &self.em())?.best.model
        } else {
            return Err(Failure::usage(
                "no model given: use --experiment, --model, --fit-input or a config document",
            ));
        };
        Ok(ResolvedModel { model, reward: None, stops: None })
    }

    /// Stopping problem for the resolved model. Reward precedence: `reward`,
    /// then `alpha` times the Poisson means, then the experiment's reward,
    /// then the Poisson means themselves.
    pub fn problem(&self) -> Outcome<StopProblem> {
        let resolved = self.resolve_model()?;
        let stops = self.stops.or(resolved.stops).unwrap_or(DEFAULT_STOPS);
        let rho = self.rho.unwrap_or(DEFAULT_RHO);
        let model = resolved.model;
        if let Some(r) = &self.reward {
            return Ok(StopProblem::new(model, r.clone(), stops, rho)?);
        }
        if let Some(alpha) = &self.alpha {
            return Ok(StopProblem::from_click_rates(model, alpha, stops, rho)?);
        }
        let reward = match resolved.reward {
            Some(r) => r,
            None => match model.emission().poisson_means() {
                Some(g) => g.to_vec(),
                None => return Err(Failure::usage("categorical models need an explicit reward vector")),
            },
        };
        Ok(StopProblem::new(model, reward, stops, rho)?)
    }
}

pub struct ResolvedModel {
    pub model: HmmModel,
    pub reward: Option<Vec<f64>>,
    pub stops: Option<usize>,
}

pub fn load_model(path: &Path) -> Outcome<HmmModel> {
    let text = read_file(path)?;
    HmmModel::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn load_series(path: &Path) -> Outcome<CountSeries> {
    if !path.is_file() {
        return Err(Failure::usage(format!("file not found: {}", path.display())));
    }
    CountSeries::from_csv_path(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Parses `"1-6"`, `"1..6"` or `"2,3,5"`.
pub fn parse_state_range(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid state range `{s}`");
    let range = s.split_once("..").or_else(|| s.split_once('-'));
    let states: Vec<usize> = if let Some((a, b)) = range {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if states.is_empty() || states.contains(&0) {
        return Err(bad());
    }
    Ok(states)
}

pub fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid number `{t}` in `{s}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_ranges() {
        assert_eq!(parse_state_range("1-4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_state_range("2..3").unwrap(), vec![2, 3]);
        assert_eq!(parse_state_range("3,5").unwrap(), vec![3, 5]);
        assert!(parse_state_range("0-2").is_err());
        assert!(parse_state_range("a").is_err());
        assert!(parse_state_range("4-2").is_err());
    }

    #[test]
    fn two_sources_rejected() {
        let cfg: RunConfig = serde_json::from_str(r#"{"experiment": "synthetic", "model_file": "x.json"}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
