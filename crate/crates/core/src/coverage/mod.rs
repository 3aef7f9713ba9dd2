//! Scenario-set planning: factor abstraction, coverage constraints C1–C4,
//! covering arrays, sample sizing and weighted success estimation.

mod covering_array;
mod domain;
mod planner;
mod stats;

pub use covering_array::{generate_covering_array, uncovered_tuples};
pub use domain::{AbstractionMap, Cell, FactorDomain, FactorKind, Monotonicity, Value};
pub use planner::{
    check_coverage, plan, seed_boundaries, ConstraintReport, CoverageReport, CoverageSpec, ExposurePrior,
    MalfunctionRegion, OutcomeOracle, PlanInput, Problem, Provenance, TestPoint, TestSet,
};
pub use stats::{
    hoeffding_min_samples, importance_proposal, weighted_success, wilson_half_width, wilson_interval, EstimateWithCI,
    OutcomeRecord,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverageError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty domain list")]
    EmptyDomain,
    #[error("empty record set")]
    EmptySet,
    #[error("degenerate prior: all mass is zero")]
    DegeneratePrior,
    #[error("infeasible: tracked cell {0} has no relevant point")]
    Infeasible(String),
    #[error("budget of {budget} points exceeded (coverage needs {needed})")]
    BudgetExceeded { budget: usize, needed: usize },
}
