//! Room layout reconstruction from per-frame plane detections.
//!
//! Per-frame wall and floor/ceiling detections (class, bounding box, plane
//! equation) are lifted into a common world frame, clustered with a Bayesian
//! Gaussian mixture, intersected into candidate wall segments and finally
//! accepted or rejected by spatial voting of the measured patches.

pub mod candidates;
pub mod clustering;
pub mod geometry;
pub mod layout;
pub mod measurements;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod voting;
