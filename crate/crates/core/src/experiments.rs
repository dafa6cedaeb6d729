//! Built-in model parameter sets.
//!
//! Matrices are stored with the rounding they were published with. A few
//! printed rows are off by rounding (they sum to 0.99 or 0.9999); [`Experiment::model`]
//! renormalizes every row before building the chain.

use crate::error::{Error, Result};
use crate::hmm::HmmModel;
use crate::stopping::StopProblem;

pub const SYNTHETIC_P: [[f64; 3]; 3] = [[0.2, 0.1, 0.7], [0.1, 0.1, 0.8], [0.0, 0.1, 0.9]];
pub const SYNTHETIC_G: [f64; 3] = [12.0, 7.0, 2.0];
pub const SYNTHETIC_R: [f64; 3] = [9.0, 3.0, 1.0];

pub const YOUTUBE_P: [[f64; 5]; 5] = [
    [0.94, 0.06, 0.00, 0.00, 0.00],
    [0.02, 0.94, 0.04, 0.00, 0.00],
    [0.00, 0.02, 0.96, 0.02, 0.00],
    [0.00, 0.00, 0.06, 0.91, 0.03],
    [0.00, 0.00, 0.00, 0.01, 0.99],
];
pub const YOUTUBE_G: [f64; 5] = [184.0, 139.0, 102.0, 66.0, 37.0];

pub const TWITCH_P: [[f64; 5]; 5] = [
    [0.97, 0.03, 0.00, 0.00, 0.00],
    [0.01, 0.96, 0.03, 0.00, 0.00],
    [0.00, 0.02, 0.95, 0.03, 0.00],
    [0.00, 0.00, 0.02, 0.96, 0.01],
    [0.00, 0.00, 0.00, 0.02, 0.98],
];
pub const TWITCH_G: [f64; 5] = [55.24, 42.40, 34.65, 28.30, 20.6];

pub const BUZZ_P: [[f64; 2]; 2] = [[1.0, 0.0], [0.1462, 0.8538]];
pub const BUZZ_B: [[f64; 3]; 2] = [[0.1489, 0.4467, 0.4044], [0.3727, 0.5325, 0.0947]];
pub const BUZZ_R: [f64; 2] = [10.0, 1.0];

pub const NAMES: [&str; 4] = ["synthetic", "youtube", "twitch", "buzz-change"];

#[derive(Debug, Clone, PartialEq)]
pub enum PrintedEmission {
    Poisson(Vec<f64>),
    Categorical(Vec<Vec<f64>>),
}

/// A named parameter set with its default stopping problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: &'static str,
    /// Transition matrix as printed.
    pub p: Vec<Vec<f64>>,
    pub emission: PrintedEmission,
    pub pi0: Vec<f64>,
    /// Stop reward; `alpha_i g_i` with `alpha = 1` for the viewer-count models.
    pub reward: Vec<f64>,
    pub stops: usize,
}

fn rows<const N: usize, const M: usize>(a: &[[f64; M]; N]) -> Vec<Vec<f64>> {
    a.iter().map(|r| r.to_vec()).collect()
}

fn normalized(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let t: f64 = r.iter().sum();
            r.iter().map(|x| x / t).collect()
        })
        .collect()
}

pub fn experiment(name: &str) -> Result<Experiment> {
    let uniform = |s: usize| vec![1.0 / s as f64; s];
    Ok(match name {
        "synthetic" => Experiment {
            name: "synthetic",
            p: rows(&SYNTHETIC_P),
            emission: PrintedEmission::Poisson(SYNTHETIC_G.to_vec()),
            pi0: uniform(3),
            reward: SYNTHETIC_R.to_vec(),
            stops: 5,
        },
        "youtube" => Experiment {
            name: "youtube",
            p: rows(&YOUTUBE_P),
            emission: PrintedEmission::Poisson(YOUTUBE_G.to_vec()),
            pi0: uniform(5),
            reward: YOUTUBE_G.to_vec(),
            stops: 5,
        },
        "twitch" => Experiment {
            name: "twitch",
            p: rows(&TWITCH_P),
            emission: PrintedEmission::Poisson(TWITCH_G.to_vec()),
            pi0: uniform(5),
            reward: TWITCH_G.to_vec(),
            stops: 5,
        },
        "buzz-change" => Experiment {
            name: "buzz-change",
            p: rows(&BUZZ_P),
            emission: PrintedEmission::Categorical(rows(&BUZZ_B)),
            pi0: vec![0.0, 1.0],
            reward: BUZZ_R.to_vec(),
            stops: 1,
        },
        other => {
            return Err(Error::Domain(format!("unknown experiment `{other}` (known: {})", NAMES.join(", "))));
        }
    })
}

impl Experiment {
    /// The chain with every printed row rescaled to sum to one.
    pub fn model(&self) -> Result<HmmModel> {
        let p = normalized(&self.p);
        match &self.emission {
            PrintedEmission::Poisson(g) => HmmModel::poisson(p, self.pi0.clone(), g.clone()),
            PrintedEmission::Categorical(b) => HmmModel::categorical(p, self.pi0.clone(), normalized(b)),
        }
    }

    pub fn problem(&self, rho: f64) -> Result<StopProblem> {
        StopProblem::new(self.model()?, self.reward.clone(), self.stops, rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_experiments_build() {
        for name in NAMES {
            let e = experiment(name).unwrap();
            let m = e.model().unwrap();
            assert!(m.transition().is_row_stochastic(1e-12));
            e.problem(0.9).unwrap();
        }
        assert!(experiment("nope").is_err());
    }

    #[test]
    fn renormalization_only_touches_rounded_rows() {
        let m = experiment("twitch").unwrap().model().unwrap();
        assert_eq!(m.transition()[(0, 0)], 0.97);
        assert!((m.transition()[(3, 3)] - 0.96 / 0.99).abs() < 1e-15);
    }
}
