//! Opportunistic ad scheduling in live streams as a multiple-stopping POMDP.
//!
//! Viewer engagement is a hidden Markov chain observed through viewer
//! counts. The crate filters the engagement belief, solves the stopping
//! problem on a belief grid, searches linear threshold policies with SPSA,
//! fits the chain with EM and evaluates policies by Monte Carlo.

pub mod action;
pub mod em;
pub mod error;
pub mod experiments;
pub mod hmm;
pub mod matrix;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod spsa;
pub mod stopping;

pub use action::Action;
pub use em::{CountSeries, EmConfig, FitResult};
pub use error::{Error, Result};
pub use hmm::{Belief, Emission, HmmModel, Observation};
pub use matrix::Matrix;
pub use policy::{phi_to_theta, LinearThresholdPolicy, PhiParams};
pub use sim::{CompletionRule, Policy};
pub use spsa::SpsaConfig;
pub use stopping::{BeliefGrid, GridSolution, SolverConfig, StopProblem};
