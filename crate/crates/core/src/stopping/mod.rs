//! Multiple stopping over the belief simplex.

pub mod grid;
pub mod problem;
pub mod solve;
pub mod verify;

pub use grid::BeliefGrid;
pub use problem::{check_assumptions, truncate_observations, AssumptionReport, Check, ObservationTable, StopProblem, StopRewards, Witness};
pub use solve::{default_resolution, solve, value_iteration, GridSolution, InitialValue, SolverConfig, MAX_DP_STATES};
pub use verify::{
    extract_stopping_sets, grid_lines, verify_monotone_value, verify_nested, verify_threshold_on_lines, LineReport,
    LineViolation, MonotoneReport, NestingReport, MONOTONE_TOL,
};
