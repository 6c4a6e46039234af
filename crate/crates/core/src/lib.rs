//! Calibration-free indoor positioning.
//!
//! Wi-Fi ranging (RSS pathloss or RTT/FTM polynomial models) is fused with
//! pedestrian dead reckoning in a four-state extended Kalman filter. Every
//! model parameter is estimated online: a joint gradient-descent fit over the
//! first few steps seeds the filter, the filter then tracks the PDR
//! parameters as part of its state, and the ranging parameters are refined
//! periodically against least-squares position fixes.
//!
//! The crate also ships a deterministic synthetic world (AP layouts, walks,
//! RSS/FTM and IMU synthesis) and an experiment runner that drives the whole
//! pipeline from a JSON scenario file.
//!
//! ```text
//!  IMU ──► orientation ──► pdr (LPF, steps, β, ϕ) ──┐
//!                                                  ├─► pipeline ──► fusion (EKF) ──► metrics
//!  Wi-Fi ─► ranging (select APs, d̂ = r(s; Θ)) ─────┘        │
//!                                                  calibration (initial + self)
//! ```

pub mod calibration;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod orientation;
pub mod par;
pub mod pdr;
pub mod pipeline;
pub mod ranging;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};

/// Planar position or displacement in meters (x east, y north).
pub type Point = nalgebra::Vector2<f64>;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}
