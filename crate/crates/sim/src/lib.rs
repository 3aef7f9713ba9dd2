// NaN-rejecting guards read better as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod rrt;
pub mod vehicle;

pub use rrt::{plan_dual, Mitigability, PlanResult, PlannerConfig};
pub use vehicle::{simulate, simulate_with, Scene, SimOptions, SimOutcome, Strategy, VehicleParams};
