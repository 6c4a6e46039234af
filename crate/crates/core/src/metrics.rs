//! Accuracy metrics: MAE, RMSE, 75th-percentile error, mean ranging interval
//! and error CDFs.

use serde::{Deserialize, Serialize};

use crate::simulator::TruthSample;
use crate::{Error, Point, Result};

/// Estimates farther than this from every truth timestamp are dropped.
pub const MAX_ALIGNMENT_GAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mae: f64,
    pub rmse: f64,
    pub p75: f64,
    /// Seconds. `None` when fewer than two non-burst-delimited epochs exist.
    pub mean_ranging_interval: Option<f64>,
    pub ranging_epochs: usize,
    pub matched: usize,
    pub dropped: usize,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data, at position `q·(n − 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Pairs each estimate with the truth sample nearest in time. `truth` must
/// be sorted by time.
pub fn align(estimates: &[(f64, Point)], truth: &[TruthSample]) -> (Vec<f64>, usize) {
    let mut errors = Vec::with_capacity(estimates.len());
    let mut dropped = 0;
    for (t, p) in estimates {
        let i = truth.partition_point(|s| s.t < *t);
        let nearest = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| truth.get(j))
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()));
        match nearest {
            Some(s) if (s.t - t).abs() <= MAX_ALIGNMENT_GAP => errors.push((p - s.position).norm()),
            _ => dropped += 1,
        }
    }
    (errors, dropped)
}

/// Mean gap between consecutive ranging epochs, counting only gaps that end
/// after the first `burst` epochs.
pub fn mean_ranging_interval(ranging_times: &[f64], burst: usize) -> Option<f64> {
    let gaps: Vec<f64> = ranging_times
        .windows(2)
        .enumerate()
        .filter(|(i, _)| i + 1 >= burst)
        .map(|(_, w)| w[1] - w[0])
        .collect();
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

pub fn error_stats(errors: &[f64]) -> Result<(f64, f64, f64)> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("no position errors to summarize".into()));
    }
    let n = errors.len() as f64;
    let mae = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((mae, rmse, quantile(&sorted, 0.75)))
}

pub fn compute_report(
    estimates: &[(f64, Point)],
    truth: &[TruthSample],
    ranging_times: &[f64],
    burst: usize,
) -> Result<RunReport> {
    let (errors, dropped) = align(estimates, truth);
    let (mae, rmse, p75) = error_stats(&errors)?;
    Ok(RunReport {
        mae,
        rmse,
        p75,
        mean_ranging_interval: mean_ranging_interval(ranging_times, burst),
        ranging_epochs: ranging_times.len(),
        matched: errors.len(),
        dropped,
        errors,
    })
}

/// Empirical CDF: one `(error, fraction ≤ error)` row per distinct value.
/// Pool runs by concatenating their error series.
pub fn export_cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match rows.last_mut() {
            Some(last) if last.0 == *e => last.1 = frac,
            _ => rows.push((*e, frac)),
        }
    }
    rows
}

/// Fraction of `errors` at or below `x`.
pub fn cdf_at(errors: &[f64], x: f64) -> f64 {
    errors.iter().filter(|e| **e <= x).count() as f64 / errors.len() as f64
}
