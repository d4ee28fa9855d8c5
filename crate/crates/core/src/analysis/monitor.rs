use serde::{Deserialize, Serialize};

use super::hrv::mean;
use super::metrics::medape;
use crate::error::{Error, Result};

/// Heart-rate window length and hop, seconds.
pub const HR_WINDOW: f64 = 10.0;
pub const HR_HOP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrWindow {
    /// Window start, seconds.
    pub start: f64,
    pub bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrEstimate {
    /// Successive beat intervals, ms.
    pub rr_ms: Vec<f64>,
    pub hr: Vec<HrWindow>,
}

/// Heart rate (bpm) from the intervals lying wholly inside `[start, start + len]`.
pub fn window_hr(peaks: &[f64], start: f64, len: f64) -> Option<f64> {
    let end = start + len;
    let rr: Vec<f64> = peaks
        .windows(2)
        .filter(|w| w[0] >= start && w[1] <= end)
        .map(|w| (w[1] - w[0]) * 1000.0)
        .collect();
    (!rr.is_empty()).then(|| 60_000.0 / mean(&rr))
}

/// RR intervals and sliding-window heart rate. Windows start at the first
/// beat and advance by [`HR_HOP`] while they fit before the last beat; a
/// record shorter than one window yields a single window.
pub fn rr_and_hr(peaks: &[f64]) -> Result<HrEstimate> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 beats, got {}", peaks.len())));
    }
    let rr_ms = peaks.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
    let (first, last) = (peaks[0], peaks[peaks.len() - 1]);
    let mut hr = Vec::new();
    let mut start = first;
    loop {
        if let Some(bpm) = window_hr(peaks, start, HR_WINDOW) {
            hr.push(HrWindow { start, bpm });
        }
        start += HR_HOP;
        if start + HR_WINDOW > last + 1e-9 {
            break;
        }
    }
    Ok(HrEstimate { rr_ms, hr })
}

/// Estimated RR (ms) of the interval that contains time `t`, if any.
fn interval_at(peaks: &[f64], t: f64) -> Option<f64> {
    let i = peaks.partition_point(|&p| p <= t);
    (i > 0 && i < peaks.len()).then(|| (peaks[i] - peaks[i - 1]) * 1000.0)
}

/// Monitoring error of estimated beats against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorErrors {
    /// percent
    pub hr_medape: f64,
    /// percent
    pub rr_medape: f64,
    pub hr_windows: usize,
    pub rr_intervals: usize,
}

/// Paired estimated / true values behind [`MonitorErrors`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorPairs {
    pub hr_est: Vec<f64>,
    pub hr_true: Vec<f64>,
    pub rr_est: Vec<f64>,
    pub rr_true: Vec<f64>,
}

impl MonitorPairs {
    pub fn extend(&mut self, other: &MonitorPairs) {
        self.hr_est.extend(&other.hr_est);
        self.hr_true.extend(&other.hr_true);
        self.rr_est.extend(&other.rr_est);
        self.rr_true.extend(&other.rr_true);
    }

    pub fn errors(&self) -> Result<MonitorErrors> {
        Ok(MonitorErrors {
            hr_medape: medape(&self.hr_est, &self.hr_true)?,
            rr_medape: medape(&self.rr_est, &self.rr_true)?,
            hr_windows: self.hr_true.len(),
            rr_intervals: self.rr_true.len(),
        })
    }
}

/// HR over a fixed grid of 10 s windows (1 s hop) and RR per true interval,
/// paired with the estimated interval that spans its midpoint. A window or
/// interval the estimate cannot cover is paired with 0 (a 100 % error).
pub fn monitoring_pairs(est: &[f64], truth: &[f64], duration: f64) -> Result<MonitorPairs> {
    if truth.len() < 2 {
        return Err(Error::InsufficientData("ground truth needs at least 2 beats".into()));
    }
    let mut pairs = MonitorPairs::default();
    let mut start = 0.0;
    while start + HR_WINDOW <= duration + 1e-9 {
        if let Some(t) = window_hr(truth, start, HR_WINDOW) {
            pairs.hr_true.push(t);
            pairs.hr_est.push(window_hr(est, start, HR_WINDOW).unwrap_or(0.0));
        }
        start += HR_HOP;
    }
    if pairs.hr_true.is_empty() {
        if let Some(t) = window_hr(truth, 0.0, duration) {
            pairs.hr_true.push(t);
            pairs.hr_est.push(window_hr(est, 0.0, duration).unwrap_or(0.0));
        }
    }
    for w in truth.windows(2) {
        pairs.rr_true.push((w[1] - w[0]) * 1000.0);
        pairs.rr_est.push(interval_at(est, 0.5 * (w[0] + w[1])).unwrap_or(0.0));
    }
    Ok(pairs)
}

/// Monitoring error of estimated beats against ground truth.
pub fn monitoring_errors(est: &[f64], truth: &[f64], duration: f64) -> Result<MonitorErrors> {
    monitoring_pairs(est, truth, duration)?.errors()
}
