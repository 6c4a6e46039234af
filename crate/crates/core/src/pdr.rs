//! Pedestrian dead reckoning: step detection on the vertical GCS
//! acceleration, step length from the peak–valley swing, and position
//! propagation along the corrected heading.

use serde::{Deserialize, Serialize};

use crate::orientation::{heading_from_quaternion, to_global, ImuSample, Quaternion};
use crate::{Error, Point, Result, GRAVITY};

/// Minimum number of samples [`lowpass`] accepts.
pub const FILTER_WARMUP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdrParams {
    pub x0: f64,
    pub y0: f64,
    pub phi_ref: f64,
    pub alpha: f64,
}

impl PdrParams {
    pub fn start(&self) -> Point {
        Point::new(self.x0, self.y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// Seconds.
    pub t: f64,
    /// `(a_max − a_min)^(1/4)`.
    pub beta: f64,
    /// Device heading at detection, relative to an arbitrary reference.
    pub heading: f64,
}

/// A detected peak–valley pair, before the heading is attached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCandidate {
    /// Time of the valley, which closes the step.
    pub t: f64,
    pub peak_t: f64,
    pub a_max: f64,
    pub a_min: f64,
}

impl StepCandidate {
    pub fn beta(&self) -> f64 {
        (self.a_max - self.a_min).max(0.0).powf(0.25)
    }
}

/// Direction of travel for a GCS heading: `[−sin ϕ, cos ϕ]`.
pub fn heading_vector(heading: f64) -> Point {
    let (s, c) = heading.sin_cos();
    Point::new(-s, c)
}

/// Derivative of [`heading_vector`]: `[−cos ϕ, −sin ϕ]`.
pub fn heading_vector_derivative(heading: f64) -> Point {
    let (s, c) = heading.sin_cos();
    Point::new(-c, -s)
}

pub fn step_length(alpha: f64, beta: f64) -> f64 {
    alpha * beta
}

pub fn dead_reckon(p_prev: &Point, params: &PdrParams, step: &StepEvent) -> Point {
    p_prev + heading_vector(params.phi_ref + step.heading) * step_length(params.alpha, step.beta)
}

/// Positions after each step, starting from `(x0, y0)`.
pub fn roll_forward(params: &PdrParams, steps: &[StepEvent]) -> Vec<Point> {
    let mut p = params.start();
    steps
        .iter()
        .map(|s| {
            p = dead_reckon(&p, params, s);
            p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowPassConfig {
    pub sample_rate: f64,
    pub cutoff: f64,
}

impl Default for LowPassConfig {
    fn default() -> Self {
        Self {
            sample_rate: 100.0,
            cutoff: 3.0,
        }
    }
}

/// Second-order Butterworth low-pass (bilinear transform with prewarping),
/// transposed direct form II.
#[derive(Clone, Debug)]
pub struct LowPass {
    b: [f64; 3],
    a: [f64; 2],
    z1: f64,
    z2: f64,
    primed: bool,
}

impl LowPass {
    pub fn new(cfg: &LowPassConfig) -> Result<Self> {
        if !(cfg.cutoff > 0.0 && cfg.sample_rate > 2.0 * cfg.cutoff) {
            return Err(Error::InvalidInput(format!(
                "cutoff {} Hz invalid for sample rate {} Hz",
                cfg.cutoff, cfg.sample_rate
            )));
        }
        let k = (std::f64::consts::PI * cfg.cutoff / cfg.sample_rate).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
            z1: 0.0,
            z2: 0.0,
            primed: false,
        })
    }

    pub fn process(&mut self, x: f64) -> f64 {
        if !self.primed {
            // Start in steady state at the first input.
            self.z2 = (self.b[2] - self.a[1]) * x;
            self.z1 = (self.b[1] - self.a[0]) * x + self.z2;
            self.primed = true;
        }
        let y = self.b[0] * x + self.z1;
        self.z1 = self.b[1] * x - self.a[0] * y + self.z2;
        self.z2 = self.b[2] * x - self.a[1] * y;
        y
    }
}

pub fn lowpass(stream: &[(f64, f64)], cfg: &LowPassConfig) -> Result<Vec<(f64, f64)>> {
    if stream.len() < FILTER_WARMUP {
        return Err(Error::InsufficientData(format!(
            "low-pass needs at least {FILTER_WARMUP} samples, got {}",
            stream.len()
        )));
    }
    let mut f = LowPass::new(cfg)?;
    Ok(stream.iter().map(|&(t, x)| (t, f.process(x))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    /// Minimum peak–valley swing, m/s².
    pub prominence: f64,
    /// Minimum time between consecutive steps, s.
    pub min_interval: f64,
    /// Maximum time from a peak to its valley, s.
    pub max_interval: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            prominence: 0.8,
            min_interval: 0.25,
            max_interval: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Phase {
    /// Waiting for a rise of at least the prominence.
    Arming { min: f64 },
    SeekingPeak { t: f64, max: f64 },
    SeekingValley { peak_t: f64, peak: f64, t: f64, min: f64 },
}

/// Streaming peak-then-valley detector with hysteresis equal to the
/// prominence threshold. Extremum times are exact sample times, so the
/// output does not depend on the signal's offset or (above threshold) scale.
#[derive(Clone, Debug)]
pub struct StepDetector {
    cfg: StepConfig,
    phase: Option<Phase>,
    last_step: Option<f64>,
}

impl StepDetector {
    pub fn new(cfg: StepConfig) -> Self {
        Self {
            cfg,
            phase: None,
            last_step: None,
        }
    }

    pub fn push(&mut self, t: f64, x: f64) -> Option<StepCandidate> {
        let prom = self.cfg.prominence;
        let phase = match self.phase.take() {
            None => Phase::Arming { min: x },
            Some(p) => p,
        };
        let mut out = None;
        let next = match phase {
            Phase::Arming { min } => {
                if x > min + prom {
                    Phase::SeekingPeak { t, max: x }
                } else {
                    Phase::Arming { min: min.min(x) }
                }
            }
            Phase::SeekingPeak { t: pt, max } => {
                if x > max {
                    Phase::SeekingPeak { t, max: x }
                } else if x < max - prom {
                    Phase::SeekingValley {
                        peak_t: pt,
                        peak: max,
                        t,
                        min: x,
                    }
                } else {
                    Phase::SeekingPeak { t: pt, max }
                }
            }
            Phase::SeekingValley {
                peak_t,
                peak,
                t: vt,
                min,
            } => {
                if x < min {
                    Phase::SeekingValley {
                        peak_t,
                        peak,
                        t,
                        min: x,
                    }
                } else if x > min + prom {
                    let candidate = StepCandidate {
                        t: vt,
                        peak_t,
                        a_max: peak,
                        a_min: min,
                    };
                    let spaced = self
                        .last_step
                        .is_none_or(|last| vt - last >= self.cfg.min_interval);
                    if spaced && vt - peak_t <= self.cfg.max_interval {
                        self.last_step = Some(vt);
                        out = Some(candidate);
                    }
                    Phase::SeekingPeak { t, max: x }
                } else {
                    Phase::SeekingValley {
                        peak_t,
                        peak,
                        t: vt,
                        min,
                    }
                }
            }
        };
        self.phase = Some(next);
        out
    }
}

pub fn detect_steps(filtered: &[(f64, f64)], cfg: &StepConfig) -> Vec<StepCandidate> {
    let mut det = StepDetector::new(*cfg);
    filtered.iter().filter_map(|&(t, x)| det.push(t, x)).collect()
}

/// Full front end: GCS vertical acceleration (gravity removed) → low-pass →
/// peak/valley detection, with the heading taken at each valley sample.
pub fn extract_steps(
    samples: &[ImuSample],
    orientation: &[Quaternion],
    lpf: &LowPassConfig,
    steps: &StepConfig,
) -> Result<Vec<StepEvent>> {
    if samples.len() != orientation.len() {
        return Err(Error::InvalidInput(
            "orientation stream length differs from IMU stream".into(),
        ));
    }
    let vertical = samples
        .iter()
        .zip(orientation)
        .map(|(s, q)| Ok((s.t, to_global(q, &s.accel)?.z - GRAVITY)))
        .collect::<Result<Vec<_>>>()?;
    let filtered = lowpass(&vertical, lpf)?;
    detect_steps(&filtered, steps)
        .into_iter()
        .map(|c| {
            let idx = samples.partition_point(|s| s.t < c.t).min(samples.len() - 1);
            Ok(StepEvent {
                t: c.t,
                beta: c.beta(),
                heading: heading_from_quaternion(&orientation[idx])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn sampled(f: impl Fn(f64) -> f64, secs: f64, rate: f64) -> Vec<(f64, f64)> {
        let n = (secs * rate).round() as usize;
        (0..n).map(|i| {
            let t = i as f64 / rate;
            (t, f(t))
        })
        .collect()
    }

    /// Analytic magnitude of a bilinear-transformed Butterworth low-pass.
    fn butterworth_gain(f: f64, cfg: &LowPassConfig) -> f64 {
        let w = (PI * f / cfg.sample_rate).tan() / (PI * cfg.cutoff / cfg.sample_rate).tan();
        1.0 / (1.0 + w.powi(4)).sqrt()
    }

    fn steady_amplitude(freq: f64) -> f64 {
        let cfg = LowPassConfig::default();
        let x = sampled(|t| (2.0 * PI * freq * t).sin(), 20.0, cfg.sample_rate);
        let y = lowpass(&x, &cfg).unwrap();
        y[1000..].iter().map(|v| v.1.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn dc_gain_is_one() {
        let x = vec![(0.0, 3.25); 200];
        let y = lowpass(&x, &LowPassConfig::default()).unwrap();
        assert_eq!(y.len(), x.len());
        for &(_, v) in &y[FILTER_WARMUP..] {
            assert_abs_diff_eq!(v, 3.25, epsilon = 1e-6);
        }
    }

    #[test]
    fn too_short_is_rejected() {
        let x = vec![(0.0, 1.0); FILTER_WARMUP - 1];
        assert!(matches!(
            lowpass(&x, &LowPassConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn magnitude_response_matches_design() {
        let cfg = LowPassConfig::default();
        let hi = steady_amplitude(20.0);
        let lo = steady_amplitude(1.0);
        assert!(hi < 0.05, "20 Hz amplitude {hi}");
        assert!(lo > 0.9, "1 Hz amplitude {lo}");
        assert_abs_diff_eq!(hi, butterworth_gain(20.0, &cfg), epsilon = 2e-3);
        assert_abs_diff_eq!(lo, butterworth_gain(1.0, &cfg), epsilon = 2e-3);
    }

    #[test]
    fn flat_signal_has_no_steps() {
        let x = vec![(0.0, 0.0); 500];
        assert!(detect_steps(&x, &StepConfig::default()).is_empty());
    }

    #[test]
    fn two_hertz_sinusoid_gives_ten_steps() {
        // Peaks at 0.125 + k/2 and valleys at 0.375 + k/2 for k = 0..9.
        let x = sampled(|t| 3.0 * (2.0 * PI * 2.0 * t).sin(), 5.0, 100.0);
        let steps = detect_steps(&x, &StepConfig::default());
        assert_eq!(steps.len(), 10);
        for (k, s) in steps.iter().enumerate() {
            // Extremes fall between 100 Hz samples.
            assert_abs_diff_eq!(s.t, 0.375 + 0.5 * k as f64, epsilon = 0.0051);
            assert_abs_diff_eq!(s.a_max - s.a_min, 6.0, epsilon = 0.03);
        }
    }

    #[test]
    fn scaled_and_offset_signal_same_timestamps() {
        let base = sampled(|t| 3.0 * (2.0 * PI * 1.8 * t).sin(), 8.0, 100.0);
        let scaled: Vec<_> = base.iter().map(|&(t, v)| (t, 2.0 * v - 1.7)).collect();
        let a: Vec<f64> = detect_steps(&base, &StepConfig::default()).iter().map(|s| s.t).collect();
        let b: Vec<f64> = detect_steps(&scaled, &StepConfig::default()).iter().map(|s| s.t).collect();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_below_prominence_ignored() {
        let x = sampled(|t| 0.3 * (2.0 * PI * 2.0 * t).sin(), 5.0, 100.0);
        assert!(detect_steps(&x, &StepConfig::default()).is_empty());
    }

    #[test]
    fn min_interval_rejects_double_count() {
        // 5 Hz oscillation: valleys every 0.2 s, so every other one is gated.
        let x = sampled(|t| 2.0 * (2.0 * PI * 5.0 * t).sin(), 2.0, 100.0);
        let steps = detect_steps(&x, &StepConfig::default());
        for w in steps.windows(2) {
            assert!(w[1].t - w[0].t >= 0.25 - 1e-9);
        }
        assert!(steps.len() < 10);
    }

    #[test]
    fn beta_from_swing() {
        let c = StepCandidate {
            t: 1.0,
            peak_t: 0.8,
            a_max: 10.0,
            a_min: -6.0,
        };
        assert_abs_diff_eq!(c.beta(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn step_length_examples() {
        assert_eq!(step_length(0.5, 2.0), 1.0);
        assert_abs_diff_eq!(step_length(0.54, 1.3), 0.702, epsilon = 1e-12);
        assert_eq!(step_length(0.5, 0.0), 0.0);
    }

    #[test]
    fn dead_reckon_examples() {
        let params = PdrParams {
            x0: 0.0,
            y0: 0.0,
            phi_ref: 0.0,
            alpha: 0.5,
        };
        let step = |heading| StepEvent {
            t: 0.0,
            beta: 2.0,
            heading,
        };
        let p = dead_reckon(&Point::zeros(), &params, &step(0.0));
        assert_abs_diff_eq!(p, Point::new(0.0, 1.0), epsilon = 1e-15);
        let p = dead_reckon(&Point::zeros(), &params, &step(PI / 2.0));
        assert_abs_diff_eq!(p, Point::new(-1.0, 0.0), epsilon = 1e-15);

        let square: Vec<_> = [0.0, PI / 2.0, PI, -PI / 2.0].map(step).to_vec();
        let end = *roll_forward(&params, &square).last().unwrap();
        assert_abs_diff_eq!(end, Point::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn path_length_telescopes() {
        let params = PdrParams {
            x0: 3.0,
            y0: -1.0,
            phi_ref: 0.4,
            alpha: 0.55,
        };
        let steps: Vec<_> = (0..40)
            .map(|i| StepEvent {
                t: i as f64 * 0.5,
                beta: 1.0 + 0.01 * i as f64,
                heading: 0.1 * i as f64,
            })
            .collect();
        let pts = roll_forward(&params, &steps);
        let mut prev = params.start();
        let mut total = 0.0;
        for (p, s) in pts.iter().zip(&steps) {
            let d = (p - prev).norm();
            assert_abs_diff_eq!(d, params.alpha * s.beta, epsilon = 1e-12);
            total += d;
            prev = *p;
        }
        let expected: f64 = params.alpha * steps.iter().map(|s| s.beta).sum::<f64>();
        assert_abs_diff_eq!(total, expected, epsilon = 1e-10);
    }
}
