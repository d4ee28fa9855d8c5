use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal-consistency scale for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Time-domain HRV summary, all in ms except the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub mean_nn: f64,
    pub median_nn: f64,
    pub sdnn: f64,
    pub iqr_nn: f64,
    pub mad_nn: f64,
    pub mad_over_median: f64,
}

impl HrvFeatures {
    pub const NAMES: [&'static str; 6] = ["mean_nn", "median_nn", "sdnn", "iqr_nn", "mad_nn", "mad_over_median"];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.mean_nn, self.median_nn, self.sdnn, self.iqr_nn, self.mad_nn, self.mad_over_median]
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Linear-interpolated quantile of sorted data, position `(n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

pub fn hrv(rr_ms: &[f64]) -> Result<HrvFeatures> {
    if rr_ms.len() < 2 {
        return Err(Error::InsufficientData(format!("HRV needs at least 2 intervals, got {}", rr_ms.len())));
    }
    let mut sorted = rr_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median_nn = quantile_sorted(&sorted, 0.5);
    let deviations: Vec<f64> = rr_ms.iter().map(|v| (v - median_nn).abs()).collect();
    let mad_nn = MAD_SCALE * median(&deviations);
    Ok(HrvFeatures {
        mean_nn: mean(rr_ms),
        median_nn,
        sdnn: sample_sd(rr_ms),
        iqr_nn: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        mad_nn,
        mad_over_median: mad_nn / median_nn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn flat_series() {
        let f = hrv(&[800.0, 800.0, 800.0]).unwrap();
        assert_eq!((f.mean_nn, f.median_nn), (800.0, 800.0));
        assert_eq!((f.sdnn, f.iqr_nn, f.mad_nn, f.mad_over_median), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn three_interval_example() {
        let f = hrv(&[700.0, 800.0, 900.0]).unwrap();
        assert_relative_eq!(f.mean_nn, 800.0);
        assert_relative_eq!(f.median_nn, 800.0);
        assert_relative_eq!(f.sdnn, 100.0, epsilon = 1e-12);
        assert_relative_eq!(f.iqr_nn, 100.0, epsilon = 1e-12);
        assert_relative_eq!(f.mad_nn, 148.26, epsilon = 1e-9);
        assert_relative_eq!(f.mad_over_median, 0.1853, epsilon = 1e-4);
    }

    #[test]
    fn too_few_intervals() {
        assert!(matches!(hrv(&[800.0]), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn scale_equivariance(rr in prop::collection::vec(300.0f64..2000.0, 2..40), c in 0.1f64..10.0) {
            let a = hrv(&rr).unwrap();
            let scaled: Vec<f64> = rr.iter().map(|v| v * c).collect();
            let b = hrv(&scaled).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
            prop_assert!(close(b.mean_nn, c * a.mean_nn));
            prop_assert!(close(b.median_nn, c * a.median_nn));
            prop_assert!(close(b.sdnn, c * a.sdnn));
            prop_assert!(close(b.iqr_nn, c * a.iqr_nn));
            prop_assert!(close(b.mad_nn, c * a.mad_nn));
            prop_assert!(close(b.mad_over_median, a.mad_over_median));
        }
    }
}
