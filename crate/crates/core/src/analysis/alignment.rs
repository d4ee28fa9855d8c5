//! Phase-to-beat alignment diagnostic.
//!
//! Correlates the phase acceleration of the tracked dominant bin with the
//! Gaussian pulse train built from the true R-peaks. Following the strongest
//! reflector keeps spatial dispersion out of the score, so it reflects how
//! well contractions line up with the beats: a stable reflector gives a sharp
//! peak near zero lag, delayed and jittered contractions lower it.

use serde::{Deserialize, Serialize};

use crate::analysis::metrics::zncc;
use crate::bundle::RecordingBundle;
use crate::error::{invalid, Result};
use crate::ptl::{ptl, PtlParams};
use crate::sigproc::{neighbourhood_bounds, raw_features, CH_PHASE_D2};
use crate::synth::{gen_hpw_target, HPW_SIGMA};

/// Default lag search range, seconds.
pub const DEFAULT_MAX_LAG: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScan {
    /// Lags in seconds; positive means the target trails the phase.
    pub lags: Vec<f64>,
    pub zncc: Vec<f64>,
    pub peak_lag: f64,
    pub peak: f64,
}

/// ZNCC of two series over `-max_lag..=max_lag` seconds.
pub fn scan(a: &[f64], b: &[f64], rate: f64, max_lag: f64) -> Result<AlignmentScan> {
    if !(rate > 0.0) || !(max_lag >= 0.0) {
        return invalid("rate must be positive and max_lag non-negative");
    }
    let k = (max_lag * rate).round() as usize;
    let values = zncc(a, b, k)?;
    let lags: Vec<f64> = (0..values.len()).map(|i| (i as f64 - k as f64) / rate).collect();
    let best = (0..values.len()).fold(0, |best, i| if values[i] > values[best] { i } else { best });
    Ok(AlignmentScan { peak_lag: lags[best], peak: values[best], lags, zncc: values })
}

/// Alignment of the tracked bin's phase acceleration with the bundle's
/// R-peak pulse train.
pub fn phase_alignment(bundle: &RecordingBundle, max_lag: f64) -> Result<AlignmentScan> {
    let cir = &bundle.cir;
    let rate = cir.config.processing_rate;
    let params = PtlParams::default();
    let sel = ptl(cir, &params)?;
    let (first, last) = neighbourhood_bounds(cir, &params)?;
    let rows: Vec<usize> = sel.bins.iter().map(|b| b - first).collect();
    let tracked = raw_features(cir, first, last)?.stitch(&rows)?;
    let target = gen_hpw_target(&bundle.r_peaks, rate, HPW_SIGMA, cir.num_chirps())?;
    scan(tracked.channel(0, CH_PHASE_D2), &target.samples, rate, max_lag)
}

/// Mean peak ZNCC of the arrhythmic set divided by that of the healthy set.
pub fn normalized_zncc(arrhythmic: &[f64], healthy: &[f64]) -> Result<f64> {
    if arrhythmic.is_empty() || healthy.is_empty() {
        return invalid("both groups need at least one value");
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let h = mean(healthy);
    if h <= 0.0 {
        return invalid("healthy alignment is not positive");
    }
    Ok(mean(arrhythmic) / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadarConfig;
    use crate::synth::{gen_cir, SubjectProfile};

    #[test]
    fn scan_finds_known_shift() {
        let x: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.37).sin() + 0.3 * ((i as f64) * 0.05).cos()).collect();
        let y: Vec<f64> = (0..400).map(|i| if i >= 7 { x[i - 7] } else { 0.0 }).collect();
        let s = scan(&x, &y, 200.0, 0.1).unwrap();
        assert!((s.peak_lag - 7.0 / 200.0).abs() < 1e-12);
        assert!(s.peak > 0.99);
        assert_eq!(s.lags.len(), 41);
    }

    #[test]
    fn healthy_bundle_aligns_near_zero_lag() {
        let b = gen_cir(&SubjectProfile::healthy(4), &RadarConfig::default(), 20.0).unwrap();
        let s = phase_alignment(&b, DEFAULT_MAX_LAG).unwrap();
        assert!(s.peak_lag.abs() <= 0.020, "peak at {} s", s.peak_lag);
        assert!(s.peak > 0.1, "peak {}", s.peak);
    }

    #[test]
    fn normalized_ratio() {
        assert!((normalized_zncc(&[0.2, 0.4], &[0.6]).unwrap() - 0.5).abs() < 1e-12);
        assert!(normalized_zncc(&[], &[0.6]).is_err());
        assert!(normalized_zncc(&[0.1], &[0.0]).is_err());
    }
}
