//! Device orientation as a unit quaternion.
//!
//! Conventions: `q = [q1, q2, q3, q4]` with vector part first and scalar
//! last, and the DCM `R` describes the LCS relative to the GCS, so global
//! vectors map to device coordinates as `a' = R a` and back as `a = Rᵀ a'`.
//! For a rotation by `Φ` about axis `e`, `R = exp(-Φ [e]×)`.
//!
//! The estimator in [`update_orientation`] integrates the gyroscope exactly
//! over each sample interval and then nudges pitch and roll toward the
//! accelerometer's gravity direction. Yaw is never touched by the
//! accelerometer term, since gravity carries no heading information.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{wrap_angle, Error, Result, GRAVITY};

const UNIT_TOLERANCE: f64 = 1e-6;
const GIMBAL_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn new(q1: f64, q2: f64, q3: f64, q4: f64) -> Self {
        Self { q1, q2, q3, q4 }
    }

    pub const fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 1.0)
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    /// A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let e = axis / n;
        Self::new(e.x * s, e.y * s, e.z * s, c)
    }

    /// Pure rotation about the GCS z-axis, i.e. a heading of `yaw`.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (yaw / 2.0).sin_cos();
        Self::new(0.0, 0.0, s, c)
    }

    /// Builds the quaternion whose DCM equals `R_y(roll) R_x(pitch) R_z(yaw)`.
    pub fn from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> Self {
        let qz = Self::from_yaw(yaw);
        let (sp, cp) = (pitch / 2.0).sin_cos();
        let qx = Self::new(sp, 0.0, 0.0, cp);
        let (sr, cr) = (roll / 2.0).sin_cos();
        let qy = Self::new(0.0, sr, 0.0, cr);
        qz.mul(&qx).mul(&qy)
    }

    pub fn norm(&self) -> f64 {
        (self.q1 * self.q1 + self.q2 * self.q2 + self.q3 * self.q3 + self.q4 * self.q4).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.q1 / n, self.q2 / n, self.q3 / n, self.q4 / n)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.q1, -self.q2, -self.q3, -self.q4)
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite() && self.q3.is_finite() && self.q4.is_finite()
    }

    /// Hamilton product `self ⊗ rhs`. Under the DCM convention used here,
    /// `R(a ⊗ b) = R(b) R(a)`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (v1, w1) = (Vector3::new(self.q1, self.q2, self.q3), self.q4);
        let (v2, w2) = (Vector3::new(rhs.q1, rhs.q2, rhs.q3), rhs.q4);
        let v = v2 * w1 + v1 * w2 + v1.cross(&v2);
        Self::new(v.x, v.y, v.z, w1 * w2 - v1.dot(&v2))
    }

    fn check_unit(&self) -> Result<()> {
        if !self.is_finite() || (self.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {} is not 1 within {UNIT_TOLERANCE}",
                self.norm()
            )));
        }
        Ok(())
    }
}

/// Direction cosine matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dcm(pub Matrix3<f64>);

impl Dcm {
    /// `R_y(roll) R_x(pitch) R_z(yaw)`, the yaw-pitch-roll sequence.
    pub fn from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        let ry = Matrix3::new(cr, 0.0, -sr, 0.0, 1.0, 0.0, sr, 0.0, cr);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, sp, 0.0, -sp, cp);
        let rz = Matrix3::new(cy, sy, 0.0, -sy, cy, 0.0, 0.0, 0.0, 1.0);
        Dcm(ry * rx * rz)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Heading (yaw) of the yaw-pitch-roll factorization, in (−π, π].
    pub fn yaw(&self) -> Result<f64> {
        let (r21, r22) = (self.0[(1, 0)], self.0[(1, 1)]);
        if r21.abs() < GIMBAL_EPS && r22.abs() < GIMBAL_EPS {
            return Err(Error::DegenerateOrientation);
        }
        Ok(wrap_angle(-r21.atan2(r22)))
    }

    /// Rotation about the x-axis of the yaw-pitch-roll factorization.
    pub fn pitch(&self) -> f64 {
        self.0[(1, 2)].clamp(-1.0, 1.0).asin()
    }

    /// Rotation about the y-axis of the yaw-pitch-roll factorization.
    pub fn roll(&self) -> f64 {
        (-self.0[(0, 2)]).atan2(self.0[(2, 2)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// rad/s in the LCS.
    pub gyro: Vector3<f64>,
    /// m/s² in the LCS, gravity included.
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.gyro.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
    }
}

pub fn dcm_from_quaternion(q: &Quaternion) -> Result<Dcm> {
    q.check_unit()?;
    let Quaternion { q1, q2, q3, q4 } = *q;
    Ok(Dcm(Matrix3::new(
        1.0 - 2.0 * q2 * q2 - 2.0 * q3 * q3,
        2.0 * (q1 * q2 + q3 * q4),
        2.0 * (q1 * q3 - q2 * q4),
        2.0 * (q1 * q2 - q3 * q4),
        1.0 - 2.0 * q1 * q1 - 2.0 * q3 * q3,
        2.0 * (q2 * q3 + q1 * q4),
        2.0 * (q1 * q3 + q2 * q4),
        2.0 * (q2 * q3 - q1 * q4),
        1.0 - 2.0 * q1 * q1 - 2.0 * q2 * q2,
    )))
}

/// Converts an LCS acceleration into the GCS: `a = Rᵀ a'`.
pub fn to_global(q: &Quaternion, accel_lcs: &Vector3<f64>) -> Result<Vector3<f64>> {
    let r = dcm_from_quaternion(q)?;
    Ok(r.0.transpose() * accel_lcs)
}

/// Heading relative to the (arbitrary) reference the orientation was
/// initialized with, in (−π, π].
pub fn heading_from_quaternion(q: &Quaternion) -> Result<f64> {
    q.check_unit()?;
    let Quaternion { q1, q2, q3, q4 } = *q;
    let num = 2.0 * (q1 * q2 - q3 * q4);
    let den = 1.0 - 2.0 * q1 * q1 - 2.0 * q3 * q3;
    if num.abs() < GIMBAL_EPS && den.abs() < GIMBAL_EPS {
        return Err(Error::DegenerateOrientation);
    }
    Ok(wrap_angle(-num.atan2(den)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationConfig {
    /// Fraction of the accelerometer tilt error removed per sample.
    pub blend_gain: f64,
    /// Accelerometer correction is applied only when `|‖a‖ − g| ≤ gate·g`.
    pub accel_gate: f64,
}

impl Default for OrientationConfig {
    fn default() -> Self {
        Self {
            blend_gain: 0.02,
            accel_gate: 0.2,
        }
    }
}

/// Pitch and roll implied by a gravity-dominated accelerometer reading.
fn tilt_from_accel(accel: &Vector3<f64>) -> (f64, f64) {
    let a = accel / accel.norm();
    (a.y.clamp(-1.0, 1.0).asin(), (-a.x).atan2(a.z))
}

/// Initial orientation from a single accelerometer reading with zero heading.
pub fn initial_orientation(accel: &Vector3<f64>) -> Quaternion {
    if accel.norm() == 0.0 || !accel.iter().all(|v| v.is_finite()) {
        return Quaternion::identity();
    }
    let (pitch, roll) = tilt_from_accel(accel);
    Quaternion::from_yaw_pitch_roll(0.0, pitch, roll).normalized()
}

pub fn update_orientation(q_prev: &Quaternion, sample: &ImuSample, dt: f64) -> Result<Quaternion> {
    update_orientation_with(&OrientationConfig::default(), q_prev, sample, dt)
}

pub fn update_orientation_with(
    cfg: &OrientationConfig,
    q_prev: &Quaternion,
    sample: &ImuSample,
    dt: f64,
) -> Result<Quaternion> {
    if !sample.is_finite() || !q_prev.is_finite() {
        return Err(Error::InvalidInput("non-finite orientation input".into()));
    }
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::InvalidInput(format!("dt {dt} outside (0, 0.1]")));
    }

    // Body-frame increment: R_new = exp(-[ω dt]×) R_prev.
    let delta = Quaternion::from_axis_angle(sample.gyro, sample.gyro.norm() * dt);
    let q = q_prev.mul(&delta).normalized();

    let a_norm = sample.accel.norm();
    if (a_norm - GRAVITY).abs() > cfg.accel_gate * GRAVITY || cfg.blend_gain == 0.0 {
        return Ok(q);
    }

    let r = dcm_from_quaternion(&q)?;
    let yaw = match r.yaw() {
        Ok(y) => y,
        Err(_) => return Ok(q),
    };
    let (pitch, roll) = (r.pitch(), r.roll());
    let (pitch_acc, roll_acc) = tilt_from_accel(&sample.accel);
    let pitch = pitch + cfg.blend_gain * (pitch_acc - pitch);
    let roll = roll + cfg.blend_gain * wrap_angle(roll_acc - roll);
    Ok(Quaternion::from_yaw_pitch_roll(yaw, pitch, roll).normalized())
}

/// Runs the estimator over a whole stream, starting from the first sample's
/// accelerometer tilt with zero heading. Returns one quaternion per sample.
pub fn track(samples: &[ImuSample], cfg: &OrientationConfig) -> Result<Vec<Quaternion>> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let mut q = initial_orientation(&first.accel);
    let mut out = Vec::with_capacity(samples.len());
    out.push(q);
    for w in samples.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "IMU timestamps not strictly increasing at t={}",
                w[1].t
            )));
        }
        q = update_orientation_with(cfg, &q, &w[1], dt)?;
        out.push(q);
    }
    Ok(out)
}
