//! DAARIA: driver-attention-aware hazard display.
//!
//! Obstacle tracks (vehicle frame) and driver gaze (eye-tracker frame) are
//! brought together through an extrinsic calibration, each hazard is scored
//! by time to collision and by whether the driver has already looked at it,
//! and the remaining hazards are shown as arrows on a virtual weathervane.

pub mod attention;
pub mod calibration;
pub mod config;
pub mod geometry;
pub mod metaphor;
pub mod perception;
pub mod pipeline;
pub mod render;
pub mod replay;
pub mod restitution;
pub mod simulation;

pub use geometry::{RigidTransform, Vec3};
