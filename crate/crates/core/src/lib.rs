//! Planning and evaluation stack for BEV-driven ego decision policies.
//!
//! The pipeline is: a [`policy::Policy`] emits 40 future ego positions, the
//! [`planner`] turns them into a minimum-jerk piecewise-quintic trajectory,
//! and [`sim`] executes that trajectory on a kinematic bicycle model through
//! the differential-flatness maps in [`flat_vehicle`]. [`bev`] renders the
//! ego-centric raster observations, [`scenario`] holds the log data, and
//! [`metrics`] / [`losses`] score decisions, closed-loop traces and raster
//! predictions.

pub mod bev;
pub mod error;
pub mod flat_vehicle;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod planner;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};

/// Simulation and log clock step in seconds.
pub const FRAME_DT: f64 = 0.1;

/// Number of future positions in a decision (4 s at 0.1 s).
pub const DECISION_HORIZON: usize = 40;

/// Maximum number of history frames handed to a policy.
pub const CONTEXT_LENGTH: usize = 60;
