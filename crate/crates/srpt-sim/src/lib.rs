//! Deterministic multirate simulator of delayed vehicle teleoperation.
//!
//! The closed loop couples a single-track ground-truth plant, noisy virtual
//! sensors, an EKF state estimator, timestamped network channels with
//! GEV-distributed downlink delay, an operator-side reference-pose generator
//! and a shooting NMPC that tracks successive reference poses. A look-ahead
//! driver baseline and an experiment harness with region-wise cross-track
//! metrics complete the artifact.

pub mod config;
pub mod controller;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod link;
pub mod operator;
pub mod scenario;
pub mod vehicle;

pub use error::SimError;
