//! Index policies for allocating multi-pool resources to competing request
//! types.
//!
//! The crate covers the whole pipeline: per-pattern index values, the relaxed
//! priority policy in fluid coordinates, multiplier search by fixed-point
//! iteration, the feasible index policy with reservation thresholds, and a
//! discrete-event simulator that measures how close a policy gets to the
//! relaxed upper bound.

pub mod fixtures;
pub mod model;
pub mod multipliers;
pub mod policy;
pub mod relaxed;
pub mod simulator;
pub mod subproblem;

pub use model::{ModelError, Pattern, Pool, RequestType, SystemModel};
