//! Extended Kalman filter over `z = [x, y, φ_ref, α]`.
//!
//! The filter is advanced once per detected step by the PDR transition and
//! corrected by distance measurements whenever the position uncertainty
//! `√(P₁₁ + P₂₂)` exceeds the gate threshold `ρ`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::pdr::{heading_vector, heading_vector_derivative, PdrParams, StepEvent};
use crate::ranging::ApKind;
use crate::{wrap_angle, Error, Point, Result};

/// Rows whose AP lies closer than this to the predicted position are dropped.
pub const MIN_AP_DISTANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub z: Vector4<f64>,
    pub p: Matrix4<f64>,
    /// Index of the last processed step.
    pub k: usize,
}

impl FilterState {
    pub fn position(&self) -> Point {
        Point::new(self.z[0], self.z[1])
    }

    pub fn pdr(&self) -> PdrParams {
        PdrParams {
            x0: self.z[0],
            y0: self.z[1],
            phi_ref: self.z[2],
            alpha: self.z[3],
        }
    }

    /// `√(P₁₁ + P₂₂)`.
    pub fn position_sigma(&self) -> f64 {
        (self.p[(0, 0)] + self.p[(1, 1)]).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Initial standard deviations of `x, y, φ_ref, α`.
    pub init_sigmas: [f64; 4],
    /// Diagonal of the per-step process covariance.
    pub process: [f64; 4],
    /// Per-AP distance variance, m².
    pub measurement_var: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::for_kind(ApKind::Rss)
    }
}

impl NoiseConfig {
    pub fn for_kind(kind: ApKind) -> Self {
        Self {
            init_sigmas: [2.0, 2.0, 0.35, 0.1],
            process: [1e-4, 1e-4, 1e-6, 1e-8],
            measurement_var: match kind {
                ApKind::Rss => 4.0,
                ApKind::Rtt => 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.init_sigmas.iter().chain(&self.process).chain([&self.measurement_var]);
        if all.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("noise variances must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn process_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.process))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub rho: f64,
}

impl GatePolicy {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!("gate threshold must be >= 0, got {rho}")));
        }
        Ok(Self { rho })
    }
}

/// Filter state at step `k` with the calibrated PDR parameters and `p_b` as
/// the position.
pub fn init_state(cal: &PdrParams, p_b: Point, noise: &NoiseConfig, k: usize) -> FilterState {
    let s = noise.init_sigmas;
    FilterState {
        z: Vector4::new(p_b.x, p_b.y, cal.phi_ref, cal.alpha),
        p: Matrix4::from_diagonal(&Vector4::new(s[0] * s[0], s[1] * s[1], s[2] * s[2], s[3] * s[3])),
        k,
    }
}

/// State transition `f(z)` for one step.
pub fn transition(z: &Vector4<f64>, step: &StepEvent) -> Vector4<f64> {
    let g = heading_vector(z[2] + step.heading);
    let u = g * (z[3] * step.beta);
    Vector4::new(z[0] + u.x, z[1] + u.y, z[2], z[3])
}

/// `∂f/∂z`.
pub fn transition_jacobian(z: &Vector4<f64>, step: &StepEvent) -> Matrix4<f64> {
    let heading = z[2] + step.heading;
    let v_phi = heading_vector_derivative(heading) * (z[3] * step.beta);
    let v_alpha = heading_vector(heading) * step.beta;
    let mut f = Matrix4::identity();
    f[(0, 2)] = v_phi.x;
    f[(1, 2)] = v_phi.y;
    f[(0, 3)] = v_alpha.x;
    f[(1, 3)] = v_alpha.y;
    f
}

/// Expected distances `h(z)` to each AP.
pub fn measurement(z: &Vector4<f64>, aps: &[Point]) -> DVector<f64> {
    let p = Point::new(z[0], z[1]);
    DVector::from_iterator(aps.len(), aps.iter().map(|a| (p - a).norm()))
}

/// `∂h/∂z`: one row `[(p − pₙ)ᵀ/‖p − pₙ‖, 0, 0]` per AP.
pub fn measurement_jacobian(z: &Vector4<f64>, aps: &[Point]) -> DMatrix<f64> {
    let p = Point::new(z[0], z[1]);
    let mut h = DMatrix::zeros(aps.len(), 4);
    for (i, a) in aps.iter().enumerate() {
        let u = (p - a) / (p - a).norm();
        h[(i, 0)] = u.x;
        h[(i, 1)] = u.y;
    }
    h
}

pub fn predict(state: &FilterState, step: &StepEvent, noise: &NoiseConfig) -> Result<FilterState> {
    if !(step.beta >= 0.0 && step.beta.is_finite() && step.heading.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid step event {step:?}")));
    }
    let f = transition_jacobian(&state.z, step);
    let p = f * state.p * f.transpose() + noise.process_matrix();
    Ok(FilterState {
        z: transition(&state.z, step),
        p: (p + p.transpose()) * 0.5,
        k: state.k + 1,
    })
}

pub fn should_range(state: &FilterState, policy: &GatePolicy) -> bool {
    policy.rho == 0.0 || state.position_sigma() > policy.rho
}

/// Measurement update from distances to `aps`.
pub fn update(state: &FilterState, distances: &[f64], aps: &[Point], noise: &NoiseConfig) -> Result<FilterState> {
    if distances.len() != aps.len() {
        return Err(Error::InvalidInput("distance and AP counts differ".into()));
    }
    if distances.is_empty() {
        return Err(Error::InsufficientData("update needs at least one AP".into()));
    }
    let p_hat = state.position();
    let (kept_d, kept_ap): (Vec<f64>, Vec<Point>) = distances
        .iter()
        .zip(aps)
        .filter(|(_, a)| (p_hat - *a).norm() >= MIN_AP_DISTANCE)
        .map(|(d, a)| (*d, *a))
        .unzip();
    if kept_ap.is_empty() {
        return Err(Error::DegenerateGeometry(
            "every AP coincides with the predicted position".into(),
        ));
    }
    let n = kept_ap.len();
    let h = measurement_jacobian(&state.z, &kept_ap);
    let innovation = DVector::from_vec(kept_d) - measurement(&state.z, &kept_ap);
    let p = DMatrix::from_iterator(4, 4, state.p.iter().copied());
    let s = &h * &p * h.transpose() + DMatrix::identity(n, n) * noise.measurement_var;
    let s_inv = s
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| s.try_inverse())
        .ok_or(Error::SingularInnovation)?;
    let gain = &p * h.transpose() * s_inv;
    let dz = &gain * innovation;
    let post = (DMatrix::identity(4, 4) - &gain * &h) * &p;
    let post = (&post + post.transpose()) * 0.5;

    let mut z = state.z + Vector4::from_iterator(dz.iter().copied());
    z[2] = wrap_angle(z[2]);
    let p = Matrix4::from_iterator(post.iter().copied());
    if !z.iter().chain(p.iter()).all(|v| v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    Ok(FilterState { z, p, k: state.k })
}

/// One engine step: predict, and if the gate fires ask `request` for a
/// ranging epoch (distances and AP positions) and apply it. Returns the new
/// state and whether an update was applied.
pub fn step_engine<F>(
    state: &FilterState,
    step: &StepEvent,
    noise: &NoiseConfig,
    policy: &GatePolicy,
    request: F,
) -> Result<(FilterState, bool)>
where
    F: FnOnce() -> Option<(Vec<f64>, Vec<Point>)>,
{
    let prior = predict(state, step, noise)?;
    if !should_range(&prior, policy) {
        return Ok((prior, false));
    }
    match request() {
        Some((d, aps)) if !aps.is_empty() => Ok((update(&prior, &d, &aps, noise)?, true)),
        _ => Ok((prior, false)),
    }
}
