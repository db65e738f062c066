//! Core data model and numerics for length-aware trajectory generation.
//!
//! - [`trajectory`]: steps, trajectories, derived variables, the trajectory
//!   semi-metric and the line-delimited dataset format.
//! - [`sampling`]: quantile length buckets plus random and length-aware
//!   mini-batch samplers.
//! - [`metrics`]: KS, empirical W1, TV and JS, and the derived-variable report.
//! - [`theory`]: exact small-instance optimal transport and the certification
//!   sweeps for the derived-variable transport bounds.
//! - [`synthworld`]: a Markov-chain ground-truth process with controllable
//!   length heterogeneity.

pub mod error;
pub mod metrics;
pub mod sampling;
pub mod synthworld;
pub mod theory;
pub mod trajectory;

pub use error::{Error, Result};
