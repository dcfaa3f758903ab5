//! Mobile molecular communication between two nanomachines drifting in a
//! laminar blood-vessel flow: channel model, terminal mobility, EKF
//! distance tracking, power control with threshold detection, and the
//! Monte Carlo and analytic error-rate machinery around them.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod ekf;
pub mod error;
pub mod link;
pub mod mobility;
pub mod physics;

pub use error::{Error, Result};
