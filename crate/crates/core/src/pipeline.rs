//! End-to-end engine: IMU front end, burst ranging with initial
//! calibration, then the gated filter with periodic self-calibration.

use serde::{Deserialize, Serialize};

use crate::calibration::{
    initial_calibrate, self_calibrate, CalibrationBuffer, GdConfig, InitialCalibration, StopReason, Theta, TraceRow,
};
use crate::fusion::{init_state, predict, should_range, update, FilterState, GatePolicy, NoiseConfig};
use crate::orientation::{track, ImuSample, OrientationConfig};
use crate::par::Execution;
use crate::pdr::{extract_steps, roll_forward, LowPassConfig, PdrParams, StepConfig, StepEvent};
use crate::ranging::{select_aps, ApKind, ApRegistry, RangingParams, RangingSnapshot, ResolvedSnapshot};
use crate::{Error, Point, Result};

/// Supplies a ranging epoch on request.
pub trait RangingSource {
    /// Ranging epoch for step `step_index` at time `t`, or `None` when no
    /// result is available.
    fn request(&mut self, step_index: usize, t: f64) -> Option<RangingSnapshot>;
}

impl<F> RangingSource for F
where
    F: FnMut(usize, f64) -> Option<RangingSnapshot>,
{
    fn request(&mut self, step_index: usize, t: f64) -> Option<RangingSnapshot> {
        self(step_index, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndConfig {
    pub orientation: OrientationConfig,
    pub lowpass: LowPassConfig,
    pub steps: StepConfig,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            orientation: OrientationConfig::default(),
            lowpass: LowPassConfig::default(),
            steps: StepConfig::default(),
        }
    }
}

/// IMU stream to step events.
pub fn detect_step_events(samples: &[ImuSample], cfg: &FrontEndConfig) -> Result<Vec<StepEvent>> {
    let q = track(samples, &cfg.orientation)?;
    extract_steps(samples, &q, &cfg.lowpass, &cfg.steps)
}

/// Starting point for the initial calibration. The start position is
/// always the strongest AP of the first burst epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialGuess {
    pub rss_p0: f64,
    pub rss_eta: f64,
    /// RTT polynomial coefficients `[c0, c1, ...]`.
    pub rtt_coeffs: Vec<f64>,
    pub phi_ref: f64,
    pub alpha: f64,
}

impl Default for InitialGuess {
    fn default() -> Self {
        Self {
            rss_p0: -40.0,
            rss_eta: 2.5,
            rtt_coeffs: vec![0.0, 1.0],
            phi_ref: 0.0,
            alpha: 0.5,
        }
    }
}

impl InitialGuess {
    pub fn ranging(&self, kind: ApKind) -> RangingParams {
        match kind {
            ApKind::Rss => RangingParams::rss(self.rss_p0, self.rss_eta),
            ApKind::Rtt => RangingParams::Rtt {
                coeffs: self.rtt_coeffs.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Burst epochs used by the initial calibration.
    pub burst: usize,
    /// Most APs used per epoch.
    pub n_max: usize,
    /// Seconds between self-calibration rounds.
    pub self_cal_period: f64,
    pub buffer_capacity: usize,
    pub gd: GdConfig,
    /// `None` uses the per-kind defaults.
    pub noise: Option<NoiseConfig>,
    pub initial_guess: InitialGuess,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            burst: 8,
            n_max: 6,
            self_cal_period: 30.0,
            buffer_capacity: 100,
            gd: GdConfig::default(),
            noise: None,
            initial_guess: InitialGuess::default(),
        }
    }
}

impl EngineConfig {
    pub fn noise_for(&self, kind: ApKind) -> NoiseConfig {
        self.noise.clone().unwrap_or_else(|| NoiseConfig::for_kind(kind))
    }

    pub fn validate(&self) -> Result<()> {
        if self.burst < 2 {
            return Err(Error::InvalidInput("burst must be >= 2".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidInput("n_max must be >= 1".into()));
        }
        if !(self.self_cal_period > 0.0) {
            return Err(Error::InvalidInput("self_cal_period must be positive".into()));
        }
        self.gd.validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// Parameters estimated online.
    Proposed,
    /// Given parameters and start, ranging at every step, no calibration.
    Benchmark(Theta),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi_ref: f64,
    pub alpha: f64,
    pub p11: f64,
    pub p22: f64,
    pub ranged: bool,
}

impl TraceRecord {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCalRecord {
    pub t: f64,
    pub params: RangingParams,
    pub cost: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub skipped: usize,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineOutput {
    pub kind: ApKind,
    pub trace: Vec<TraceRecord>,
    pub initial: Option<InitialCalibration>,
    pub self_cals: Vec<SelfCalRecord>,
    pub ranging: RangingParams,
    pub ranging_times: Vec<f64>,
    pub burst: usize,
}

impl EngineOutput {
    pub fn estimates(&self) -> Vec<(f64, Point)> {
        self.trace.iter().map(|r| (r.t, r.position())).collect()
    }
}

fn record(state: &FilterState, t: f64, ranged: bool) -> TraceRecord {
    TraceRecord {
        k: state.k,
        t,
        x: state.z[0],
        y: state.z[1],
        phi_ref: state.z[2],
        alpha: state.z[3],
        p11: state.p[(0, 0)],
        p22: state.p[(1, 1)],
        ranged,
    }
}

/// Drives the filter over `steps`, pulling ranging epochs from `source`.
pub struct Engine<'a, S: RangingSource> {
    pub registry: &'a ApRegistry,
    pub kind: ApKind,
    pub cfg: &'a EngineConfig,
    pub policy: GatePolicy,
    pub exec: Execution,
    pub source: S,
}

impl<S: RangingSource> Engine<'_, S> {
    fn resolve(&mut self, k: usize, t: f64) -> Option<ResolvedSnapshot> {
        let snap = self.source.request(k, t)?;
        let r = select_aps(&snap, self.registry, self.kind, self.cfg.n_max);
        (!r.measurements.is_empty()).then_some(r)
    }

    pub fn run(mut self, steps: &[StepEvent], mode: &Mode) -> Result<EngineOutput> {
        self.cfg.validate()?;
        let noise = self.cfg.noise_for(self.kind);
        match mode {
            Mode::Proposed => self.run_proposed(steps, &noise),
            Mode::Benchmark(theta) => self.run_benchmark(steps, theta, &noise),
        }
    }

    fn run_benchmark(&mut self, steps: &[StepEvent], theta: &Theta, noise: &NoiseConfig) -> Result<EngineOutput> {
        if theta.ranging.kind() != self.kind {
            return Err(Error::InvalidInput("benchmark parameters do not match the ranging mode".into()));
        }
        let mut state = init_state(&theta.pdr, theta.pdr.start(), noise, 0);
        let mut trace = Vec::with_capacity(steps.len());
        let mut ranging_times = Vec::new();
        for (k, step) in steps.iter().enumerate() {
            state = predict(&state, step, noise)?;
            let mut ranged = false;
            if let Some(snap) = self.resolve(k, step.t) {
                state = update(&state, &snap.distances(&theta.ranging), &snap.positions(), noise)?;
                ranged = true;
                ranging_times.push(step.t);
            }
            trace.push(record(&state, step.t, ranged));
        }
        Ok(EngineOutput {
            kind: self.kind,
            trace,
            initial: None,
            self_cals: Vec::new(),
            ranging: theta.ranging.clone(),
            ranging_times,
            burst: 0,
        })
    }

    fn run_proposed(&mut self, steps: &[StepEvent], noise: &NoiseConfig) -> Result<EngineOutput> {
        let b = self.cfg.burst;
        if steps.len() < b {
            return Err(Error::InsufficientData(format!(
                "{} steps detected, initial calibration needs {b}",
                steps.len()
            )));
        }

        let mut burst = Vec::with_capacity(b);
        for (k, step) in steps[..b].iter().enumerate() {
            let snap = self
                .resolve(k, step.t)
                .ok_or_else(|| Error::InsufficientData(format!("no usable ranging result at burst step {k}")))?;
            burst.push(snap);
        }
        let strongest = burst[0].measurements[0].position;
        let guess = &self.cfg.initial_guess;
        let init = Theta {
            ranging: guess.ranging(self.kind),
            pdr: PdrParams {
                x0: strongest.x,
                y0: strongest.y,
                phi_ref: guess.phi_ref,
                alpha: guess.alpha,
            },
        };
        let initial = initial_calibrate(&init, &steps[..b], &burst, &self.cfg.gd)?;
        let mut params = initial.theta.ranging.clone();

        let mut trace = Vec::with_capacity(steps.len());
        let burst_positions = roll_forward(&initial.theta.pdr, &steps[..b]);
        let mut state = init_state(&initial.theta.pdr, burst_positions[b - 1], noise, 0);
        for (k, (step, p)) in steps[..b].iter().zip(&burst_positions).enumerate() {
            state.k = k + 1;
            let mut r = record(&state, step.t, true);
            r.x = p.x;
            r.y = p.y;
            trace.push(r);
        }
        let mut ranging_times: Vec<f64> = steps[..b].iter().map(|s| s.t).collect();
        let mut buffer = CalibrationBuffer::new(self.cfg.buffer_capacity);
        for s in burst {
            buffer.push(s);
        }

        let mut self_cals = Vec::new();
        let mut next_cal = steps[b - 1].t + self.cfg.self_cal_period;
        for (k, step) in steps.iter().enumerate().skip(b) {
            state = predict(&state, step, noise)?;
            let mut ranged = false;
            if should_range(&state, &self.policy) {
                if let Some(snap) = self.resolve(k, step.t) {
                    state = update(&state, &snap.distances(&params), &snap.positions(), noise)?;
                    buffer.push(snap);
                    ranged = true;
                    ranging_times.push(step.t);
                }
            }
            trace.push(record(&state, step.t, ranged));

            if step.t >= next_cal {
                while next_cal <= step.t {
                    next_cal += self.cfg.self_cal_period;
                }
                match self_calibrate(&params, &buffer, &self.cfg.gd, self.exec) {
                    Ok(sc) => {
                        params = sc.params.clone();
                        self_cals.push(SelfCalRecord {
                            t: step.t,
                            params: sc.params,
                            cost: sc.cost,
                            iterations: sc.iterations,
                            stop: sc.stop,
                            skipped: sc.skipped,
                            trace: sc.trace,
                        });
                    }
                    Err(Error::InsufficientData(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }

        Ok(EngineOutput {
            kind: self.kind,
            trace,
            initial: Some(initial),
            self_cals,
            ranging: params,
            ranging_times,
            burst: b,
        })
    }
}
