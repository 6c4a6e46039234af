//! Online calibration.
//!
//! Two procedures share one gradient-descent driver:
//!
//! * **Initial calibration** fits every parameter at once (ranging model plus
//!   start position, reference heading and step-length coefficient) over the
//!   first `B` steps, each paired with a ranging epoch. The cost is the sum of
//!   squared differences between the PDR-implied AP distances and the ranged
//!   distances.
//! * **Self-calibration** refines only the ranging model. For each buffered
//!   epoch the device position is replaced by the linear least-squares fix
//!   `p*` computed from the current distance estimates, so each epoch's cost
//!   is the best achievable one under the current parameters. The gradient
//!   carries the dependence of `p*` on the parameters.
//!
//! Descent steps are `θ ← θ − m·λ·s⊙∇` with a per-parameter scale `s` and a
//! step multiplier `m` starting at 1. A step that would raise the cost is
//! retried with `m` halved, so the recorded cost sequence is non-increasing;
//! after an accepted step `m` doubles, up to `max_step_multiplier`. Descent
//! stops at the iteration cap, when the cost over the last `window`
//! iterations improved by less than `min_improvement` (relative), or when no
//! shortened step lowers the cost any more.
//!
//! With `auto_scale` (the default) `s` is the inverse of the Gauss–Newton
//! curvature `2Σ(∂ε/∂θᵢ)²`, recomputed after every accepted step, which puts
//! dB, path-loss exponent, meters, radians and the step-length coefficient on
//! a common footing. Setting `auto_scale = false` and
//! `max_step_multiplier = 1` gives plain fixed-rate descent.
//!
//! The initial-calibration cost has several local minima when the start
//! position and ranging guess are both far off. Its descent therefore begins
//! with a short unscaled probe from `heading_starts` reference headings spread
//! evenly around the guessed one; the lowest-cost probe is then refined. All
//! probes and the refinement share the `max_iters` budget.

use std::collections::VecDeque;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::pdr::{heading_vector, heading_vector_derivative, PdrParams, StepEvent};
use crate::ranging::{distance_gradient_into, estimate_distance, RangingParams, ResolvedSnapshot};
use crate::{Error, Point, Result};

/// Largest accepted condition number of `AᵀA` in the least-squares fix.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    /// λ for the initial calibration.
    pub learning_rate: f64,
    /// λ̃ for self-calibration.
    pub self_learning_rate: f64,
    pub max_iters: usize,
    /// Relative cost improvement required over `window` iterations.
    pub min_improvement: f64,
    pub window: usize,
    /// Per-parameter step scale for the initial calibration, in
    /// [`Theta::to_vec`] order. `None` means all ones.
    pub initial_step_scale: Option<Vec<f64>>,
    /// Per-parameter step scale for self-calibration, in
    /// [`RangingParams::trainable`] order.
    pub self_step_scale: Option<Vec<f64>>,
    /// Halvings tried before a step is declared unproductive.
    pub max_backtracks: usize,
    /// Scale steps by the inverse Gauss–Newton curvature when no explicit
    /// scale is given.
    pub auto_scale: bool,
    /// Upper bound on the step multiplier.
    pub max_step_multiplier: f64,
    /// Reference headings probed by the initial calibration. 1 disables the
    /// probe phase.
    pub heading_starts: usize,
    /// Iteration cap of each initial-calibration probe.
    pub probe_iters: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            self_learning_rate: 0.001,
            max_iters: 5000,
            min_improvement: 0.001,
            window: 10,
            initial_step_scale: None,
            self_step_scale: None,
            max_backtracks: 40,
            auto_scale: true,
            max_step_multiplier: 1000.0,
            heading_starts: 8,
            probe_iters: 250,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.self_learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if !(self.max_step_multiplier >= 1.0) {
            return Err(Error::InvalidInput("max_step_multiplier must be >= 1".into()));
        }
        if self.heading_starts == 0 {
            return Err(Error::InvalidInput("heading_starts must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidInput("early-stop window must be >= 1".into()));
        }
        for scale in [&self.initial_step_scale, &self.self_step_scale].into_iter().flatten() {
            if scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::InvalidInput("step scales must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Every trainable parameter in the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub ranging: RangingParams,
    pub pdr: PdrParams,
}

impl Theta {
    /// Ranging parameters first, then `x0, y0, φ_ref, α`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.ranging.trainable();
        v.extend([self.pdr.x0, self.pdr.y0, self.pdr.phi_ref, self.pdr.alpha]);
        v
    }

    pub fn from_vec(&self, v: &[f64]) -> Theta {
        let n = self.ranging.num_trainable();
        Theta {
            ranging: self.ranging.with_trainable(&v[..n]),
            pdr: PdrParams {
                x0: v[n],
                y0: v[n + 1],
                phi_ref: v[n + 2],
                alpha: v[n + 3],
            },
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = self.ranging.trainable_names();
        v.extend(["x0", "y0", "phi_ref", "alpha"].map(String::from));
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Cost or gradient is exactly zero.
    Stationary,
    EarlyStop,
    /// No shortened step lowers the cost.
    Stalled,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

/// Gradient descent with a cost-acceptance rule; see the module docs.
fn descend<F, A>(
    start: Vec<f64>,
    learning_rate: f64,
    fixed_scale: &Option<Vec<f64>>,
    auto: bool,
    max_iters: usize,
    cfg: &GdConfig,
    admissible: A,
    mut eval: F,
) -> Result<Descent>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>, Vec<f64>),
    A: Fn(&[f64]) -> bool,
{
    let mut x = start;
    let (mut cost, mut grad, curv) = eval(&x);
    let mut scale = resolve_scale(fixed_scale, x.len(), auto, &curv)?;
    if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            iteration: 0,
            last_finite: x,
        });
    }
    let mut trace = vec![TraceRow {
        iter: 0,
        cost,
        params: x.clone(),
    }];
    let mut mult = 1.0;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for it in 1..=max_iters {
        if cost == 0.0 || grad.iter().all(|g| *g == 0.0) {
            stop = StopReason::Stationary;
            break;
        }
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let step = learning_rate * mult;
            let trial: Vec<f64> = x
                .iter()
                .zip(&grad)
                .zip(&scale)
                .map(|((xi, gi), si)| xi - step * si * gi)
                .collect();
            if trial == x {
                break;
            }
            if admissible(&trial) {
                let (c, g, h) = eval(&trial);
                if c.is_finite() && c <= cost && g.iter().all(|v| v.is_finite()) {
                    accepted = Some((trial, c, g, h));
                    break;
                }
            }
            mult *= 0.5;
        }
        let Some((trial, c, g, h)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        x = trial;
        cost = c;
        grad = g;
        if auto && fixed_scale.is_none() {
            scale = resolve_scale(fixed_scale, x.len(), auto, &h)?;
        }
        iterations = it;
        mult = (mult * 2.0).min(cfg.max_step_multiplier);
        trace.push(TraceRow {
            iter: it,
            cost,
            params: x.clone(),
        });

        if trace.len() > cfg.window {
            let before = trace[trace.len() - 1 - cfg.window].cost;
            if before - cost < cfg.min_improvement * before {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }

    Ok(Descent {
        params: x,
        cost,
        iterations,
        stop,
        trace,
    })
}

fn resolve_scale(scale: &Option<Vec<f64>>, n: usize, auto: bool, curvature: &[f64]) -> Result<Vec<f64>> {
    match scale {
        None if auto => Ok(curvature
            .iter()
            .map(|c| if *c > 0.0 && c.is_finite() { 1.0 / c } else { 1.0 })
            .collect()),
        None => Ok(vec![1.0; n]),
        Some(s) if s.len() == n => Ok(s.clone()),
        Some(s) => Err(Error::InvalidInput(format!(
            "step scale has {} entries, expected {n}",
            s.len()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Initial calibration
// ---------------------------------------------------------------------------

fn check_initial_inputs(steps: &[StepEvent], snapshots: &[ResolvedSnapshot]) -> Result<()> {
    if steps.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "initial calibration needs at least 2 steps, got {}",
            steps.len()
        )));
    }
    if steps.len() != snapshots.len() {
        return Err(Error::InvalidInput(format!(
            "{} steps but {} ranging snapshots",
            steps.len(),
            snapshots.len()
        )));
    }
    if let Some(k) = snapshots.iter().position(|s| s.measurements.is_empty()) {
        return Err(Error::InsufficientData(format!("snapshot {k} has no APs")));
    }
    Ok(())
}

/// Sum over steps and selected APs of `(‖p̂_PDR − pₙ‖ − d̂ₙ)²`.
pub fn initial_cost(theta: &Theta, steps: &[StepEvent], snapshots: &[ResolvedSnapshot]) -> Result<f64> {
    check_initial_inputs(steps, snapshots)?;
    Ok(initial_cost_and_gradient(theta, steps, snapshots).0)
}

/// Cost and analytic gradient (in [`Theta::to_vec`] order). The PDR position
/// sensitivities are accumulated forward along the step chain. Inputs are
/// assumed checked.
pub fn initial_cost_and_gradient(
    theta: &Theta,
    steps: &[StepEvent],
    snapshots: &[ResolvedSnapshot],
) -> (f64, Vec<f64>) {
    let (cost, grad, _) = initial_terms(theta, steps, snapshots);
    (cost, grad)
}

/// Gauss–Newton curvature `2Σ(∂ε/∂θᵢ)²` of the initial cost.
pub fn initial_curvature(theta: &Theta, steps: &[StepEvent], snapshots: &[ResolvedSnapshot]) -> Vec<f64> {
    initial_terms(theta, steps, snapshots).2
}

fn initial_terms(theta: &Theta, steps: &[StepEvent], snapshots: &[ResolvedSnapshot]) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = theta.ranging.num_trainable();
    let PdrParams {
        x0,
        y0,
        phi_ref,
        alpha,
    } = theta.pdr;
    let mut grad = vec![0.0; nr + 4];
    let mut curv = vec![0.0; nr + 4];
    let mut de = vec![0.0; nr + 4];
    let mut dd = vec![0.0; nr];
    let mut cost = 0.0;

    let mut p = Point::new(x0, y0);
    let mut dp_dphi = Point::zeros();
    let mut dp_dalpha = Point::zeros();

    for (step, snap) in steps.iter().zip(snapshots) {
        let heading = phi_ref + step.heading;
        let g = heading_vector(heading);
        p += g * (alpha * step.beta);
        dp_dphi += heading_vector_derivative(heading) * (alpha * step.beta);
        dp_dalpha += g * step.beta;

        for m in &snap.measurements {
            let diff = p - m.position;
            let range = diff.norm();
            let d_hat = distance_gradient_into(&theta.ranging, m.source, &mut dd);
            let eps = range - d_hat;
            cost += eps * eps;

            let u = if range > 0.0 { diff / range } else { Point::zeros() };
            for (e, ddi) in de[..nr].iter_mut().zip(&dd) {
                *e = -ddi;
            }
            de[nr] = u.x;
            de[nr + 1] = u.y;
            de[nr + 2] = u.dot(&dp_dphi);
            de[nr + 3] = u.dot(&dp_dalpha);
            for ((g, c), e) in grad.iter_mut().zip(&mut curv).zip(&de) {
                *g += 2.0 * eps * e;
                *c += 2.0 * e * e;
            }
        }
    }
    (cost, grad, curv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialCalibration {
    pub theta: Theta,
    pub cost: f64,
    /// Probe and refinement iterations combined.
    pub iterations: usize,
    pub stop: StopReason,
    /// The winning probe followed by the refinement.
    pub trace: Vec<TraceRow>,
}

pub fn initial_calibrate(
    init: &Theta,
    steps: &[StepEvent],
    snapshots: &[ResolvedSnapshot],
    cfg: &GdConfig,
) -> Result<InitialCalibration> {
    cfg.validate()?;
    init.ranging.validate()?;
    check_initial_inputs(steps, snapshots)?;
    if cfg.heading_starts > 1 && cfg.heading_starts * cfg.probe_iters >= cfg.max_iters {
        return Err(Error::InvalidInput(format!(
            "{} probes of {} iterations leave no budget out of max_iters = {}",
            cfg.heading_starts, cfg.probe_iters, cfg.max_iters
        )));
    }
    let start = init.to_vec();
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite initial guess".into()));
    }
    let nr = init.ranging.num_trainable();
    let admissible = |v: &[f64]| init.ranging.admissible(&v[..nr]) && v[nr + 3] > 0.0;
    let eval = |v: &[f64]| initial_terms(&init.from_vec(v), steps, snapshots);

    let mut spent = 0;
    let mut best: Option<Descent> = None;
    if cfg.heading_starts > 1 {
        for j in 0..cfg.heading_starts {
            let mut x = start.clone();
            x[nr + 2] += std::f64::consts::TAU * j as f64 / cfg.heading_starts as f64;
            let probe = descend(
                x,
                cfg.learning_rate,
                &cfg.initial_step_scale,
                false,
                cfg.probe_iters,
                cfg,
                admissible,
                eval,
            )?;
            spent += probe.iterations;
            if best.as_ref().map_or(true, |b| probe.cost < b.cost) {
                best = Some(probe);
            }
        }
    }
    let from = best.as_ref().map_or(start, |b| b.params.clone());
    let mut d = descend(
        from,
        cfg.learning_rate,
        &cfg.initial_step_scale,
        cfg.auto_scale,
        cfg.max_iters - spent,
        cfg,
        admissible,
        eval,
    )?;
    if let Some(probe) = best {
        let offset = probe.iterations;
        let mut trace = probe.trace;
        trace.extend(d.trace.into_iter().skip(1).map(|r| TraceRow { iter: r.iter + offset, ..r }));
        d.trace = trace;
    }
    let mut theta = init.from_vec(&d.params);
    theta.pdr.phi_ref = crate::wrap_angle(theta.pdr.phi_ref);
    Ok(InitialCalibration {
        theta,
        cost: d.cost,
        iterations: spent + d.iterations,
        stop: d.stop,
        trace: d.trace,
    })
}

// ---------------------------------------------------------------------------
// Least-squares anchor
// ---------------------------------------------------------------------------

/// Geometry of the differenced trilateration system, anchored on the first
/// AP. Depends only on AP positions, so it is built once per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LsGeometry {
    positions: Vec<Point>,
    /// `(AᵀA)⁻¹Aᵀ`, one column per differenced row.
    pinv: Vec<Point>,
}

impl LsGeometry {
    pub fn new(positions: &[Point]) -> Result<Self> {
        if positions.len() < 3 {
            return Err(Error::SingularGeometry(format!(
                "least squares needs at least 3 APs, got {}",
                positions.len()
            )));
        }
        let anchor = positions[0];
        let rows: Vec<Point> = positions[1..].iter().map(|p| (p - anchor) * 2.0).collect();
        let mut ata = Matrix2::zeros();
        for r in &rows {
            ata += r * r.transpose();
        }
        let eig = ata.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::SingularGeometry(
                "AP geometry is collinear or ill-conditioned".into(),
            ));
        }
        let inv = ata
            .try_inverse()
            .ok_or_else(|| Error::SingularGeometry("AᵀA not invertible".into()))?;
        Ok(Self {
            positions: positions.to_vec(),
            pinv: rows.iter().map(|r| inv * r).collect(),
        })
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn solve(&self, distances: &[f64]) -> Point {
        let p1 = self.positions[0];
        let base = p1.norm_squared() - distances[0] * distances[0];
        self.positions[1..]
            .iter()
            .zip(&distances[1..])
            .zip(&self.pinv)
            .fold(Point::zeros(), |acc, ((pn, dn), col)| {
                acc + col * (pn.norm_squared() - dn * dn - base)
            })
    }

    /// `∂p*/∂θ` for one parameter, given `d̂ₙ` and `∂d̂ₙ/∂θ` for every AP.
    pub fn solve_sensitivity(&self, distances: &[f64], partials: &[f64]) -> Point {
        let anchor = 2.0 * distances[0] * partials[0];
        distances[1..]
            .iter()
            .zip(&partials[1..])
            .zip(&self.pinv)
            .fold(Point::zeros(), |acc, ((dn, pn), col)| {
                acc + col * (-2.0 * dn * pn + anchor)
            })
    }
}

/// Linear least-squares position from distances to `ap_positions`, using the
/// first AP as the differencing anchor.
pub fn ls_position(distances: &[f64], ap_positions: &[Point]) -> Result<Point> {
    if distances.len() != ap_positions.len() {
        return Err(Error::InvalidInput("distance and AP counts differ".into()));
    }
    Ok(LsGeometry::new(ap_positions)?.solve(distances))
}

/// `∂p*/∂θ` for each trainable ranging parameter of `params`.
pub fn ls_position_gradient(params: &RangingParams, snapshot: &ResolvedSnapshot) -> Result<Vec<Point>> {
    let geom = LsGeometry::new(&snapshot.positions())?;
    let n = snapshot.measurements.len();
    let k = params.num_trainable();
    let mut partials = vec![vec![0.0; n]; k];
    let mut dd = vec![0.0; k];
    let mut distances = Vec::with_capacity(n);
    for (j, m) in snapshot.measurements.iter().enumerate() {
        distances.push(distance_gradient_into(params, m.source, &mut dd));
        for (i, v) in dd.iter().enumerate() {
            partials[i][j] = *v;
        }
    }
    Ok(partials
        .iter()
        .map(|col| geom.solve_sensitivity(&distances, col))
        .collect())
}

// ---------------------------------------------------------------------------
// Self-calibration
// ---------------------------------------------------------------------------

/// FIFO of the most recent ranging epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationBuffer {
    snapshots: VecDeque<ResolvedSnapshot>,
    capacity: usize,
}

impl CalibrationBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            snapshots: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, snapshot: ResolvedSnapshot) {
        if self.capacity == 0 {
            return;
        }
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(snapshot);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResolvedSnapshot> {
        self.snapshots.iter()
    }
}

impl Default for CalibrationBuffer {
    fn default() -> Self {
        Self::new(100)
    }
}

/// One buffered epoch prepared for self-calibration.
#[derive(Clone, Debug)]
pub struct SelfCalEpoch {
    geometry: LsGeometry,
    sources: Vec<f64>,
}

impl SelfCalEpoch {
    pub fn new(snapshot: &ResolvedSnapshot) -> Result<Self> {
        Ok(Self {
            geometry: LsGeometry::new(&snapshot.positions())?,
            sources: snapshot.measurements.iter().map(|m| m.source).collect(),
        })
    }

    /// Best achievable cost `C̃` at the LS fix, and its gradient.
    pub fn cost_and_gradient(&self, params: &RangingParams) -> (f64, Vec<f64>) {
        let (cost, grad, _) = self.terms(params);
        (cost, grad)
    }

    /// Cost, gradient and Gauss–Newton curvature.
    fn terms(&self, params: &RangingParams) -> (f64, Vec<f64>, Vec<f64>) {
        let k = params.num_trainable();
        let n = self.sources.len();
        let mut dd = vec![0.0; k];
        let mut distances = Vec::with_capacity(n);
        let mut partials = vec![vec![0.0; n]; k];
        for (j, s) in self.sources.iter().enumerate() {
            distances.push(distance_gradient_into(params, *s, &mut dd));
            for (i, v) in dd.iter().enumerate() {
                partials[i][j] = *v;
            }
        }
        let p_star = self.geometry.solve(&distances);
        let dp: Vec<Point> = partials
            .iter()
            .map(|col| self.geometry.solve_sensitivity(&distances, col))
            .collect();

        let mut cost = 0.0;
        let mut grad = vec![0.0; k];
        let mut curv = vec![0.0; k];
        for (j, pn) in self.geometry.positions().iter().enumerate() {
            let diff = p_star - pn;
            let range = diff.norm();
            let eps = range - distances[j];
            cost += eps * eps;
            let u = if range > 0.0 { diff / range } else { Point::zeros() };
            for i in 0..k {
                let e = u.dot(&dp[i]) - partials[i][j];
                grad[i] += 2.0 * eps * e;
                curv[i] += 2.0 * e * e;
            }
        }
        (cost, grad, curv)
    }

    pub fn cost(&self, params: &RangingParams) -> f64 {
        let distances: Vec<f64> = self.sources.iter().map(|s| estimate_distance(params, *s)).collect();
        let p_star = self.geometry.solve(&distances);
        self.geometry
            .positions()
            .iter()
            .zip(&distances)
            .map(|(pn, d)| {
                let e = (p_star - pn).norm() - d;
                e * e
            })
            .sum()
    }
}

/// Prepares the buffer's epochs, skipping those whose geometry cannot
/// support a least-squares fix. Returns the usable epochs and the skip count.
pub fn prepare_epochs<'a>(snapshots: impl IntoIterator<Item = &'a ResolvedSnapshot>) -> (Vec<SelfCalEpoch>, usize) {
    let mut skipped = 0;
    let epochs = snapshots
        .into_iter()
        .filter_map(|s| match SelfCalEpoch::new(s) {
            Ok(e) => Some(e),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    (epochs, skipped)
}

/// Summed self-calibration cost and gradient over `epochs`. Per-epoch terms
/// are computed (possibly in parallel) and reduced in order.
pub fn self_cost_and_gradient(params: &RangingParams, epochs: &[SelfCalEpoch], exec: Execution) -> (f64, Vec<f64>) {
    let (cost, grad, _) = self_terms(params, epochs, exec);
    (cost, grad)
}

/// Gauss–Newton curvature of the summed self-calibration cost.
pub fn self_curvature(params: &RangingParams, epochs: &[SelfCalEpoch], exec: Execution) -> Vec<f64> {
    self_terms(params, epochs, exec).2
}

fn self_terms(params: &RangingParams, epochs: &[SelfCalEpoch], exec: Execution) -> (f64, Vec<f64>, Vec<f64>) {
    let parts = par::map(exec, epochs, |e| e.terms(params));
    let k = params.num_trainable();
    let (mut cost, mut grad, mut curv) = (0.0, vec![0.0; k], vec![0.0; k]);
    for (c, g, h) in parts {
        cost += c;
        for i in 0..k {
            grad[i] += g[i];
            curv[i] += h[i];
        }
    }
    (cost, grad, curv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCalibration {
    pub params: RangingParams,
    pub cost: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
    /// Epochs left out because their AP geometry was degenerate.
    pub skipped: usize,
}

pub fn self_calibrate(
    params: &RangingParams,
    buffer: &CalibrationBuffer,
    cfg: &GdConfig,
    exec: Execution,
) -> Result<SelfCalibration> {
    cfg.validate()?;
    params.validate()?;
    if buffer.is_empty() {
        return Err(Error::InsufficientData("calibration buffer is empty".into()));
    }
    let (epochs, skipped) = prepare_epochs(buffer.iter());
    if epochs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "all {skipped} buffered epochs have degenerate AP geometry"
        )));
    }
    let start = params.trainable();
    let d = descend(
        start,
        cfg.self_learning_rate,
        &cfg.self_step_scale,
        cfg.auto_scale,
        cfg.max_iters,
        cfg,
        |v| params.admissible(v),
        |v| self_terms(&params.with_trainable(v), &epochs, exec),
    )?;
    Ok(SelfCalibration {
        params: params.with_trainable(&d.params),
        cost: d.cost,
        iterations: d.iterations,
        stop: d.stop,
        trace: d.trace,
        skipped,
    })
}
