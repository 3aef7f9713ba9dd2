// NaN-rejecting guards read better as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod coverage;
pub mod fsm;
pub mod hazard;
