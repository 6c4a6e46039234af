//! Deterministic synthetic world: AP layouts, scripted walks, RSS/FTM
//! synthesis and IMU streams.
//!
//! Every random draw comes from a ChaCha8 stream keyed on the world seed and
//! a purpose tag (plus epoch and AP index for ranging), so a given ranging
//! epoch sees the same noise no matter how many other epochs were requested.
//! That keeps runs with different gate thresholds paired.
//!
//! The device is held flat. Its orientation estimator starts at zero heading,
//! so the true reference heading equals the walk's initial heading.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::orientation::ImuSample;
use crate::pdr::{LowPassConfig, PdrParams};
use crate::ranging::{AccessPoint, ApKind, ApRegistry, Observation, RangingParams, RangingSnapshot};
use crate::{wrap_angle, Error, Point, Result, GRAVITY};

/// Half-width, in seconds, of the window over which a corner turn is spread.
const TURN_HALF_WIDTH: f64 = 0.25;

const TAG_IMU: u64 = 1;
const TAG_RANGING: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Walk {
    pub waypoints: Vec<Point>,
    /// m/s.
    pub speed: f64,
    /// Steps per second.
    pub cadence: f64,
    /// Standing still before walking, seconds.
    #[serde(default)]
    pub pause_start: f64,
    /// Standing still after walking, seconds.
    #[serde(default = "default_pause_end")]
    pub pause_end: f64,
}

fn default_pause_end() -> f64 {
    1.0
}

/// Heading of travel along `d`, in the `[−sin θ, cos θ]` convention.
pub fn heading_of(d: Point) -> f64 {
    (-d.x).atan2(d.y)
}

impl Walk {
    pub fn new(waypoints: Vec<Point>, speed: f64, cadence: f64) -> Result<Self> {
        let w = Self {
            waypoints,
            speed,
            cadence,
            pause_start: 0.0,
            pause_end: default_pause_end(),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidInput("a walk needs at least 2 waypoints".into()));
        }
        if self.waypoints.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("non-finite waypoint".into()));
        }
        if self.waypoints.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
            return Err(Error::InvalidInput("consecutive waypoints coincide".into()));
        }
        if !(self.speed > 0.0 && self.cadence > 0.0 && self.speed.is_finite() && self.cadence.is_finite()) {
            return Err(Error::InvalidInput("speed and cadence must be positive".into()));
        }
        if !(self.pause_start >= 0.0 && self.pause_end >= 0.0) {
            return Err(Error::InvalidInput("pauses must be >= 0".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn step_length(&self) -> f64 {
        self.speed / self.cadence
    }

    pub fn walking_time(&self) -> f64 {
        self.length() / self.speed
    }

    pub fn duration(&self) -> f64 {
        self.pause_start + self.walking_time() + self.pause_end
    }

    pub fn initial_heading(&self) -> f64 {
        heading_of(self.waypoints[1] - self.waypoints[0])
    }

    /// Ground-truth PDR parameters for a step-length coefficient `alpha`.
    pub fn true_pdr(&self, alpha: f64) -> PdrParams {
        PdrParams {
            x0: self.waypoints[0].x,
            y0: self.waypoints[0].y,
            phi_ref: self.initial_heading(),
            alpha,
        }
    }

    /// Position after walking `s` meters along the path.
    pub fn position_along(&self, s: f64) -> Point {
        let mut left = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let seg = (w[1] - w[0]).norm();
            if left <= seg {
                return w[0] + (w[1] - w[0]) * (left / seg);
            }
            left -= seg;
        }
        *self.waypoints.last().unwrap()
    }

    fn distance_at(&self, t: f64) -> f64 {
        ((t - self.pause_start) * self.speed).clamp(0.0, self.length())
    }

    pub fn position_at(&self, t: f64) -> Point {
        self.position_along(self.distance_at(t))
    }

    /// Heading of the segment being walked at `t`.
    pub fn heading_at(&self, t: f64) -> f64 {
        let mut left = self.distance_at(t);
        let n = self.waypoints.len();
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let seg = (w[1] - w[0]).norm();
            if left < seg || i == n - 2 {
                return heading_of(w[1] - w[0]);
            }
            left -= seg;
        }
        unreachable!()
    }

    /// Times at which the walker passes each interior waypoint, with the
    /// signed heading change there.
    fn turns(&self) -> Vec<(f64, f64)> {
        let mut t = self.pause_start;
        let mut out = Vec::new();
        for w in self.waypoints.windows(3) {
            t += (w[1] - w[0]).norm() / self.speed;
            let turn = wrap_angle(heading_of(w[2] - w[1]) - heading_of(w[1] - w[0]));
            out.push((t, turn));
        }
        out
    }

    /// Cumulative device heading change since the start, with each corner
    /// spread linearly over ±0.25 s.
    pub fn heading_change(&self, t: f64) -> f64 {
        self.turns()
            .iter()
            .map(|(tc, turn)| turn * ((t - tc) / (2.0 * TURN_HALF_WIDTH) + 0.5).clamp(0.0, 1.0))
            .sum()
    }

    /// Ground-truth step instants (the valleys of the vertical acceleration).
    pub fn step_times(&self) -> Vec<f64> {
        let n = (self.walking_time() * self.cadence + 1e-9).floor() as usize;
        (1..=n).map(|k| self.pause_start + k as f64 / self.cadence).collect()
    }

    /// Ground-truth position after each step.
    pub fn step_positions(&self) -> Vec<Point> {
        self.step_times().iter().map(|t| self.position_at(*t)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub position: Point,
    pub heading: f64,
}

/// Samples the walk every `dt` seconds from 0 through its full duration.
pub fn synth_truth(walk: &Walk, dt: f64) -> Result<Vec<TruthSample>> {
    walk.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let n = (walk.duration() / dt + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            let t = i as f64 * dt;
            TruthSample {
                t,
                position: walk.position_at(t),
                heading: walk.heading_at(t),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssTruth {
    pub p0: f64,
    pub eta: f64,
    pub d0: f64,
    /// Shadowing standard deviation, dB.
    pub sigma: f64,
}

impl Default for RssTruth {
    fn default() -> Self {
        Self {
            p0: -32.0,
            eta: 3.0,
            d0: 1.0,
            sigma: 4.0,
        }
    }
}

impl RssTruth {
    pub fn params(&self) -> RangingParams {
        RangingParams::Rss {
            p0: self.p0,
            eta: self.eta,
            d0: self.d0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RttTruth {
    pub c1: f64,
    pub c0: f64,
    /// Raw-distance noise standard deviation, m.
    pub sigma: f64,
}

impl Default for RttTruth {
    fn default() -> Self {
        Self {
            c1: 0.81,
            c0: -1.40,
            sigma: 0.5,
        }
    }
}

impl RttTruth {
    pub fn params(&self) -> RangingParams {
        RangingParams::rtt_linear(self.c1, self.c0)
    }
}

fn check_distance(position: Point, ap: Point) -> Result<f64> {
    let d = (position - ap).norm();
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidInput("position coincides with the AP".into()));
    }
    Ok(d)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).map_or(0.0, |n| n.sample(rng))
}

/// Received power at `position` from an AP at `ap`, dBm.
pub fn synth_rss<R: Rng + ?Sized>(truth: &RssTruth, position: Point, ap: Point, rng: &mut R) -> Result<f64> {
    let d = check_distance(position, ap)?;
    Ok(truth.p0 - 10.0 * truth.eta * (d / truth.d0).log10() + gaussian(rng, truth.sigma))
}

/// Raw FTM distance: the preimage of the linear calibration map plus noise.
pub fn synth_ftm<R: Rng + ?Sized>(truth: &RttTruth, position: Point, ap: Point, rng: &mut R) -> Result<f64> {
    let d = check_distance(position, ap)?;
    Ok((d - truth.c0) / truth.c1 + gaussian(rng, truth.sigma))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuConfig {
    /// Hz.
    pub sample_rate: f64,
    /// Vertical oscillation amplitude, m/s². `None` picks the amplitude
    /// whose filtered swing reproduces the walk's step length under the
    /// true step-length coefficient.
    pub amplitude: Option<f64>,
    pub gyro_sigma: f64,
    /// Constant z-gyro bias, rad/s.
    pub gyro_bias: f64,
    pub accel_sigma: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            sample_rate: 100.0,
            amplitude: None,
            gyro_sigma: 0.0,
            gyro_bias: 0.0,
            accel_sigma: 0.0,
        }
    }
}

/// Amplitude of `−A cos(2π c t)` such that the low-passed peak–valley swing
/// `s` satisfies `alpha · s^(1/4) = step_length`.
pub fn amplitude_for(alpha: f64, step_length: f64, cadence: f64, lpf: &LowPassConfig) -> f64 {
    let ratio = (std::f64::consts::PI * cadence / lpf.sample_rate).tan()
        / (std::f64::consts::PI * lpf.cutoff / lpf.sample_rate).tan();
    let gain = 1.0 / (1.0 + ratio.powi(4)).sqrt();
    (step_length / alpha).powi(4) / (2.0 * gain)
}

/// IMU stream for a flat-held device: vertical acceleration
/// `g − A cos(2π c τ)` while walking (τ from walk start, so valleys fall on
/// the ground-truth step instants), z-gyro equal to the heading rate.
pub fn synth_imu<R: Rng + ?Sized>(walk: &Walk, cfg: &ImuConfig, amplitude: f64, rng: &mut R) -> Result<Vec<ImuSample>> {
    walk.validate()?;
    if !(cfg.sample_rate > 0.0) {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }
    let dt = 1.0 / cfg.sample_rate;
    let n = (walk.duration() * cfg.sample_rate + 1e-9).floor() as usize;
    let walk_end = walk.pause_start + walk.walking_time();
    let mut out = Vec::with_capacity(n + 1);
    let mut prev_heading = walk.heading_change(0.0);
    for i in 0..=n {
        let t = i as f64 * dt;
        let heading = walk.heading_change(t);
        let rate = if i == 0 { 0.0 } else { (heading - prev_heading) / dt };
        prev_heading = heading;
        let bounce = if t > walk.pause_start && t < walk_end {
            -amplitude * (2.0 * std::f64::consts::PI * walk.cadence * (t - walk.pause_start)).cos()
        } else {
            0.0
        };
        let mut noise = || gaussian(rng, cfg.accel_sigma);
        let accel = Vector3::new(noise(), noise(), GRAVITY + bounce + noise());
        let gyro = Vector3::new(
            gaussian(rng, cfg.gyro_sigma),
            gaussian(rng, cfg.gyro_sigma),
            rate + cfg.gyro_bias + gaussian(rng, cfg.gyro_sigma),
        );
        out.push(ImuSample { t, gyro, accel });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub aps: Vec<AccessPoint>,
    pub rss: RssTruth,
    pub rtt: RttTruth,
    /// True step-length coefficient.
    pub alpha: f64,
    pub imu: ImuConfig,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let mut aps = Vec::new();
        for (i, (x, y)) in [(0.0, 0.0), (30.0, 0.0), (30.0, 30.0), (0.0, 30.0), (15.0, -3.0), (33.0, 15.0), (15.0, 33.0), (-3.0, 15.0)]
            .into_iter()
            .enumerate()
        {
            for kind in [ApKind::Rss, ApKind::Rtt] {
                aps.push(AccessPoint {
                    id: format!("{kind}{i}").as_str().into(),
                    position: Point::new(x, y),
                    kind,
                });
            }
        }
        Self {
            aps,
            rss: RssTruth::default(),
            rtt: RttTruth::default(),
            alpha: 0.5,
            imu: ImuConfig::default(),
            seed: 0,
        }
    }
}

/// Folds values into one well-mixed 64-bit seed.
fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// A world together with the walk through it.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub world: WorldConfig,
    pub walk: Walk,
}

impl Simulation {
    pub fn new(world: WorldConfig, walk: Walk) -> Result<Self> {
        walk.validate()?;
        ApRegistry::new(world.aps.clone())?;
        Ok(Self { world, walk })
    }

    pub fn registry(&self) -> ApRegistry {
        ApRegistry::new(self.world.aps.clone()).expect("validated on construction")
    }

    pub fn true_pdr(&self) -> PdrParams {
        self.walk.true_pdr(self.world.alpha)
    }

    pub fn true_ranging(&self, kind: ApKind) -> RangingParams {
        match kind {
            ApKind::Rss => self.world.rss.params(),
            ApKind::Rtt => self.world.rtt.params(),
        }
    }

    pub fn amplitude(&self, lpf: &LowPassConfig) -> f64 {
        self.world.imu.amplitude.unwrap_or_else(|| {
            amplitude_for(self.world.alpha, self.walk.step_length(), self.walk.cadence, lpf)
        })
    }

    pub fn imu(&self, lpf: &LowPassConfig) -> Result<Vec<ImuSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.world.seed, TAG_IMU]));
        synth_imu(&self.walk, &self.world.imu, self.amplitude(lpf), &mut rng)
    }

    /// Ranging epoch `epoch` taken at time `t`: one observation per AP of
    /// `kind`. The noise depends only on (seed, epoch, AP).
    pub fn snapshot(&self, kind: ApKind, epoch: usize, t: f64) -> RangingSnapshot {
        let position = self.walk.position_at(t);
        let observations = self
            .world
            .aps
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.kind == kind)
            .filter_map(|(i, ap)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    self.world.seed,
                    TAG_RANGING,
                    kind as u64,
                    epoch as u64,
                    i as u64,
                ]));
                let source = match kind {
                    ApKind::Rss => synth_rss(&self.world.rss, position, ap.position, &mut rng),
                    ApKind::Rtt => synth_ftm(&self.world.rtt, position, ap.position, &mut rng),
                };
                source.ok().map(|source| Observation {
                    ap_id: ap.id.clone(),
                    source,
                })
            })
            .collect();
        RangingSnapshot { t, observations }
    }
}
