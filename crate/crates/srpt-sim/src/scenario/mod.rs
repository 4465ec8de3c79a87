//! The test world: the 438 m track with regions A-H, adhesion map and
//! crosswind profile, plus the sensor layer with its noise sets.

pub mod sensors;
pub mod track;

pub use sensors::{estimator_params_for, NoiseSetConfig, NoiseSetId, SensorRig};
pub use track::{Region, TrackModel};
