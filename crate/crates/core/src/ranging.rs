//! Ranging models: RSS log-distance pathloss and the RTT/FTM calibration
//! polynomial, their parameter gradients, and per-epoch AP selection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub String);

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ApId {
    fn from(s: &str) -> Self {
        ApId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApKind {
    Rss,
    Rtt,
}

impl fmt::Display for ApKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApKind::Rss => "rss",
            ApKind::Rtt => "rtt",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: ApId,
    pub position: Point,
    pub kind: ApKind,
}

/// Known AP positions, keyed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApRegistry {
    aps: BTreeMap<ApId, AccessPoint>,
}

impl ApRegistry {
    pub fn new(aps: impl IntoIterator<Item = AccessPoint>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ap in aps {
            if !ap.position.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("AP {} has non-finite position", ap.id)));
            }
            if map.contains_key(&ap.id) {
                return Err(Error::InvalidInput(format!("duplicate AP id {}", ap.id)));
            }
            map.insert(ap.id.clone(), ap);
        }
        Ok(Self { aps: map })
    }

    pub fn get(&self, id: &ApId) -> Option<&AccessPoint> {
        self.aps.get(id)
    }

    pub fn len(&self) -> usize {
        self.aps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessPoint> {
        self.aps.values()
    }

    pub fn of_kind(&self, kind: ApKind) -> impl Iterator<Item = &AccessPoint> {
        self.aps.values().filter(move |ap| ap.kind == kind)
    }
}

/// Trainable ranging model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum RangingParams {
    /// `d̂ = d0 · 10^((P0 − P) / (10 η))`; `d0` is fixed.
    Rss { p0: f64, eta: f64, d0: f64 },
    /// `d̂ = max(Σ cᵢ Dⁱ, 0)`, coefficients in ascending order `c0..cm`.
    Rtt { coeffs: Vec<f64> },
}

impl RangingParams {
    pub fn rss(p0: f64, eta: f64) -> Self {
        RangingParams::Rss { p0, eta, d0: 1.0 }
    }

    /// Linear calibration `c1·D + c0`.
    pub fn rtt_linear(c1: f64, c0: f64) -> Self {
        RangingParams::Rtt {
            coeffs: vec![c0, c1],
        }
    }

    pub fn kind(&self) -> ApKind {
        match self {
            RangingParams::Rss { .. } => ApKind::Rss,
            RangingParams::Rtt { .. } => ApKind::Rtt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RangingParams::Rss { p0, eta, d0 } => {
                if !(p0.is_finite() && *eta > 0.0 && eta.is_finite() && *d0 > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "invalid RSS parameters p0={p0} eta={eta} d0={d0}"
                    )));
                }
            }
            RangingParams::Rtt { coeffs } => {
                if !(coeffs.len() == 2 || coeffs.len() == 3) {
                    return Err(Error::InvalidInput(format!(
                        "RTT polynomial degree must be 1 or 2, got {}",
                        coeffs.len() as isize - 1
                    )));
                }
                if !coeffs.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidInput("non-finite RTT coefficient".into()));
                }
            }
        }
        Ok(())
    }

    /// Trainable parameters in a fixed order: `[P0, η]` or `[c0, …, cm]`.
    pub fn trainable(&self) -> Vec<f64> {
        match self {
            RangingParams::Rss { p0, eta, .. } => vec![*p0, *eta],
            RangingParams::Rtt { coeffs } => coeffs.clone(),
        }
    }

    pub fn num_trainable(&self) -> usize {
        match self {
            RangingParams::Rss { .. } => 2,
            RangingParams::Rtt { coeffs } => coeffs.len(),
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        match self {
            RangingParams::Rss { .. } => vec!["p0".into(), "eta".into()],
            RangingParams::Rtt { coeffs } => (0..coeffs.len()).map(|i| format!("c{i}")).collect(),
        }
    }

    /// Same model with the trainable parameters replaced.
    pub fn with_trainable(&self, values: &[f64]) -> Self {
        match self {
            RangingParams::Rss { d0, .. } => RangingParams::Rss {
                p0: values[0],
                eta: values[1],
                d0: *d0,
            },
            RangingParams::Rtt { coeffs } => RangingParams::Rtt {
                coeffs: values[..coeffs.len()].to_vec(),
            },
        }
    }

    /// Whether the trainable values would form a usable model.
    pub fn admissible(&self, values: &[f64]) -> bool {
        values.iter().all(|v| v.is_finite())
            && match self {
                RangingParams::Rss { .. } => values[1] > 0.0,
                RangingParams::Rtt { .. } => true,
            }
    }
}

/// Distance estimate from a ranging source (RSS in dBm, or raw FTM meters).
pub fn estimate_distance(params: &RangingParams, source: f64) -> f64 {
    match params {
        RangingParams::Rss { p0, eta, d0 } => d0 * 10f64.powf((p0 - source) / (10.0 * eta)),
        RangingParams::Rtt { coeffs } => polynomial(coeffs, source).max(0.0),
    }
}

fn polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Partial derivatives of [`estimate_distance`] with respect to each
/// trainable parameter, in [`RangingParams::trainable`] order. The RTT clamp
/// contributes a zero subgradient.
pub fn distance_gradient(params: &RangingParams, source: f64) -> Vec<f64> {
    let mut out = vec![0.0; params.num_trainable()];
    distance_gradient_into(params, source, &mut out);
    out
}

pub(crate) fn distance_gradient_into(params: &RangingParams, source: f64, out: &mut [f64]) -> f64 {
    match params {
        RangingParams::Rss { p0, eta, .. } => {
            let d = estimate_distance(params, source);
            out[0] = d * LN_10 / (10.0 * eta);
            out[1] = -d * LN_10 * (p0 - source) / (10.0 * eta * eta);
            d
        }
        RangingParams::Rtt { coeffs } => {
            let raw = polynomial(coeffs, source);
            if raw > 0.0 {
                let mut pow = 1.0;
                for o in out.iter_mut().take(coeffs.len()) {
                    *o = pow;
                    pow *= source;
                }
                raw
            } else {
                out.iter_mut().for_each(|o| *o = 0.0);
                0.0
            }
        }
    }
}

/// One ranging observation: AP id and source value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ap_id: ApId,
    pub source: f64,
}

/// One ranging epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangingSnapshot {
    pub t: f64,
    pub observations: Vec<Observation>,
}

/// A selected observation with its AP position resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub ap_id: ApId,
    pub position: Point,
    pub source: f64,
}

/// A ranging epoch after AP selection; the unit of calibration data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSnapshot {
    pub t: f64,
    pub measurements: Vec<Measurement>,
}

impl ResolvedSnapshot {
    pub fn positions(&self) -> Vec<Point> {
        self.measurements.iter().map(|m| m.position).collect()
    }

    pub fn distances(&self, params: &RangingParams) -> Vec<f64> {
        self.measurements
            .iter()
            .map(|m| estimate_distance(params, m.source))
            .collect()
    }
}

/// Picks up to `n_max` observations from APs of `kind`: strongest RSS first,
/// or smallest raw FTM distance first. Ties go to the lower AP id.
/// Observations of unknown or other-kind APs are ignored.
pub fn select_aps(
    snapshot: &RangingSnapshot,
    registry: &ApRegistry,
    kind: ApKind,
    n_max: usize,
) -> ResolvedSnapshot {
    let mut picked: Vec<Measurement> = snapshot
        .observations
        .iter()
        .filter(|o| o.source.is_finite())
        .filter_map(|o| {
            registry
                .get(&o.ap_id)
                .filter(|ap| ap.kind == kind)
                .map(|ap| Measurement {
                    ap_id: o.ap_id.clone(),
                    position: ap.position,
                    source: o.source,
                })
        })
        .collect();
    picked.sort_by(|a, b| {
        let primary = match kind {
            ApKind::Rss => b.source.total_cmp(&a.source),
            ApKind::Rtt => a.source.total_cmp(&b.source),
        };
        primary.then_with(|| a.ap_id.cmp(&b.ap_id))
    });
    picked.truncate(n_max);
    ResolvedSnapshot {
        t: snapshot.t,
        measurements: picked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    /// Central difference of `estimate_distance` in trainable parameter `i`.
    fn fd_partial(params: &RangingParams, source: f64, i: usize, h: f64) -> f64 {
        let mut plus = params.trainable();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        (estimate_distance(&params.with_trainable(&plus), source)
            - estimate_distance(&params.with_trainable(&minus), source))
            / (2.0 * h)
    }

    #[test]
    fn rss_reference_distance() {
        let p = RangingParams::rss(-37.2, 3.8);
        assert_abs_diff_eq!(estimate_distance(&p, -37.2), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rss_ten_meters() {
        let p = RangingParams::rss(-29.7, 3.54);
        assert_relative_eq!(estimate_distance(&p, -65.1), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn rtt_linear_and_clamp() {
        let p = RangingParams::rtt_linear(0.81, -1.40);
        assert_abs_diff_eq!(estimate_distance(&p, 10.0), 6.7, epsilon = 1e-12);
        assert_eq!(estimate_distance(&p, 1.0), 0.0);
        assert_eq!(distance_gradient(&p, 1.0), vec![0.0, 0.0]);
        assert_eq!(distance_gradient(&p, 10.0), vec![1.0, 10.0]);
    }

    #[test]
    fn rss_gradient_at_reference() {
        let p = RangingParams::rss(-30.0, 2.5);
        let g = distance_gradient(&p, -30.0);
        assert_abs_diff_eq!(g[0], LN_10 / 25.0, epsilon = 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn quadratic_rtt_gradient() {
        let p = RangingParams::Rtt {
            coeffs: vec![0.5, 0.9, 0.01],
        };
        assert_eq!(distance_gradient(&p, 4.0), vec![1.0, 4.0, 16.0]);
    }

    #[test]
    fn validation() {
        assert!(RangingParams::rss(-30.0, 0.0).validate().is_err());
        assert!(RangingParams::Rtt { coeffs: vec![1.0] }.validate().is_err());
        assert!(RangingParams::Rtt { coeffs: vec![0.0; 4] }.validate().is_err());
        assert!(RangingParams::rtt_linear(1.0, 0.0).validate().is_ok());
    }

    fn registry() -> ApRegistry {
        ApRegistry::new((0..10).map(|i| AccessPoint {
            id: ApId(format!("ap{i:02}")),
            position: Point::new(i as f64, 0.0),
            kind: if i < 8 { ApKind::Rss } else { ApKind::Rtt },
        }))
        .unwrap()
    }

    fn snapshot(values: &[(&str, f64)]) -> RangingSnapshot {
        RangingSnapshot {
            t: 0.0,
            observations: values
                .iter()
                .map(|(id, s)| Observation {
                    ap_id: ApId::from(*id),
                    source: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn select_fewer_than_max() {
        let snap = snapshot(&[("ap01", -70.0), ("ap00", -50.0), ("ap02", -60.0)]);
        let sel = select_aps(&snap, &registry(), ApKind::Rss, 6);
        let ids: Vec<_> = sel.measurements.iter().map(|m| m.ap_id.0.as_str()).collect();
        assert_eq!(ids, ["ap00", "ap02", "ap01"]);
    }

    #[test]
    fn select_strongest_six() {
        let values: Vec<(String, f64)> =
            (0..8).map(|i| (format!("ap{i:02}"), -40.0 - 5.0 * i as f64)).collect();
        let refs: Vec<(&str, f64)> = values.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let mut snap = snapshot(&refs);
        snap.observations.push(Observation {
            ap_id: "ap08".into(),
            source: 3.0,
        });
        snap.observations.push(Observation {
            ap_id: "unknown".into(),
            source: -10.0,
        });
        let sel = select_aps(&snap, &registry(), ApKind::Rss, 6);
        assert_eq!(sel.measurements.len(), 6);
        assert_eq!(sel.measurements[0].ap_id, ApId::from("ap00"));
        assert_eq!(sel.measurements[5].ap_id, ApId::from("ap05"));
    }

    #[test]
    fn select_tie_break_and_rtt_order() {
        let snap = snapshot(&[("ap03", -60.0), ("ap01", -60.0)]);
        let sel = select_aps(&snap, &registry(), ApKind::Rss, 6);
        assert_eq!(sel.measurements[0].ap_id, ApId::from("ap01"));

        let snap = snapshot(&[("ap09", 12.0), ("ap08", 4.0)]);
        let sel = select_aps(&snap, &registry(), ApKind::Rtt, 6);
        assert_eq!(sel.measurements[0].ap_id, ApId::from("ap08"));
    }

    #[test]
    fn registry_rejects_duplicates() {
        let ap = AccessPoint {
            id: "a".into(),
            position: Point::zeros(),
            kind: ApKind::Rss,
        };
        assert!(ApRegistry::new([ap.clone(), ap]).is_err());
    }

    proptest! {
        #[test]
        fn rss_monotone(p0 in -60.0..-20.0f64, eta in 1.5..5.0f64, p in -95.0..-20.0f64, dp in 0.01..10.0f64) {
            let params = RangingParams::rss(p0, eta);
            prop_assert!(estimate_distance(&params, p - dp) > estimate_distance(&params, p));
        }

        #[test]
        fn rss_round_trip(p0 in -60.0..-20.0f64, eta in 1.5..5.0f64, p in -95.0..-20.0f64) {
            let params = RangingParams::rss(p0, eta);
            let d = estimate_distance(&params, p);
            let back = p0 - 10.0 * eta * d.log10();
            prop_assert!((back - p).abs() < 1e-9);
        }

        #[test]
        fn rtt_non_negative(c0 in -10.0..10.0f64, c1 in -2.0..2.0f64, c2 in -0.1..0.1f64, d in -5.0..80.0f64) {
            let params = RangingParams::Rtt { coeffs: vec![c0, c1, c2] };
            prop_assert!(estimate_distance(&params, d) >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 1000 {
            let (params, source) = if checked % 2 == 0 {
                (
                    RangingParams::rss(rng.random_range(-50.0..-20.0), rng.random_range(1.5..5.0)),
                    rng.random_range(-95.0..-25.0),
                )
            } else {
                (
                    RangingParams::rtt_linear(rng.random_range(0.6..1.2), rng.random_range(-5.0..5.0)),
                    rng.random_range(0.0..60.0),
                )
            };
            if let RangingParams::Rtt { coeffs } = &params {
                if polynomial(coeffs, source).abs() < 1e-3 {
                    continue;
                }
            }
            let g = distance_gradient(&params, source);
            for (i, gi) in g.iter().enumerate() {
                let fd = fd_partial(&params, source, i, h);
                let scale = gi.abs().max(1e-3);
                assert!((gi - fd).abs() / scale < 1e-5, "{params:?} s={source} i={i}: {gi} vs {fd}");
            }
            checked += 1;
        }
    }
}
