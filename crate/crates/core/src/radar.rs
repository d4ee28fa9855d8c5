//! Radar domain types and the phase / displacement math shared by every stage.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FMCW chirp configuration.
///
/// `processing_rate` is the slow-time rate after decimation; every
/// [`CirMatrix`] handled downstream of the simulator is sampled at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarConfig {
    /// Hz
    pub carrier_freq: f64,
    /// s
    pub chirp_period: f64,
    /// s
    pub idle_time: f64,
    pub samples_per_chirp: usize,
    /// samples/s
    pub adc_rate: f64,
    /// Hz
    pub processing_rate: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            carrier_freq: 79e9,
            chirp_period: 50e-6,
            idle_time: 150e-6,
            samples_per_chirp: 256,
            adc_rate: 6e6,
            processing_rate: 200.0,
        }
    }
}

impl RadarConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Chirp repetition rate, `1 / (chirp_period + idle_time)`.
    pub fn slow_time_rate(&self) -> f64 {
        1.0 / (self.chirp_period + self.idle_time)
    }

    /// Number of raw chirps averaged into one processing-rate frame.
    pub fn decimation(&self) -> usize {
        (self.slow_time_rate() / self.processing_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq", self.carrier_freq),
            ("chirp_period", self.chirp_period),
            ("idle_time", self.idle_time),
            ("adc_rate", self.adc_rate),
            ("processing_rate", self.processing_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.samples_per_chirp == 0 {
            return invalid("samples_per_chirp must be positive");
        }
        let ratio = self.slow_time_rate() / self.processing_rate;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return invalid(format!(
                "processing_rate {} does not divide slow_time_rate {}",
                self.processing_rate,
                self.slow_time_rate()
            ));
        }
        Ok(())
    }
}

/// Complex CIR, range bins x chirps, stored row-major (one row per bin).
#[derive(Debug, Clone, PartialEq)]
pub struct CirMatrix {
    data: Vec<Complex32>,
    num_chirps: usize,
    pub config: RadarConfig,
}

impl CirMatrix {
    pub fn new(data: Vec<Complex32>, num_chirps: usize, config: RadarConfig) -> Result<Self> {
        let num_samples = config.samples_per_chirp;
        if num_chirps == 0 {
            return invalid("CIR needs at least one chirp");
        }
        if data.len() != num_samples * num_chirps {
            return invalid(format!(
                "CIR payload has {} samples, expected {num_samples}x{num_chirps}",
                data.len()
            ));
        }
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return invalid("CIR contains non-finite samples");
        }
        Ok(Self { data, num_chirps, config })
    }

    pub fn zeros(num_chirps: usize, config: RadarConfig) -> Result<Self> {
        Self::new(
            vec![Complex32::new(0.0, 0.0); config.samples_per_chirp * num_chirps],
            num_chirps,
            config,
        )
    }

    pub fn num_samples(&self) -> usize {
        self.config.samples_per_chirp
    }

    pub fn num_chirps(&self) -> usize {
        self.num_chirps
    }

    pub fn get(&self, bin: usize, chirp: usize) -> Complex32 {
        self.data[bin * self.num_chirps + chirp]
    }

    pub fn set(&mut self, bin: usize, chirp: usize, v: Complex32) {
        self.data[bin * self.num_chirps + chirp] = v;
    }

    /// Slow-time series of one range bin.
    pub fn row(&self, bin: usize) -> &[Complex32] {
        &self.data[bin * self.num_chirps..(bin + 1) * self.num_chirps]
    }

    pub fn row_mut(&mut self, bin: usize) -> &mut [Complex32] {
        &mut self.data[bin * self.num_chirps..(bin + 1) * self.num_chirps]
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn duration(&self) -> f64 {
        self.num_chirps as f64 / self.config.processing_rate
    }
}

/// Real matrix with the same bins x chirps layout as [`CirMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl RealMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("matrix payload {} != {rows}x{cols}", data.len()));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Self::new(rows.concat(), rows.len(), cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Per-chirp selected range bin (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSelection {
    pub bins: Vec<usize>,
}

impl BinSelection {
    pub fn constant(bin: usize, num_chirps: usize) -> Self {
        Self { bins: vec![bin; num_chirps] }
    }

    pub fn validate_for(&self, cir: &CirMatrix) -> Result<()> {
        if self.bins.len() != cir.num_chirps() {
            return invalid(format!(
                "selection length {} != num_chirps {}",
                self.bins.len(),
                cir.num_chirps()
            ));
        }
        if let Some(b) = self.bins.iter().find(|&&b| b >= cir.num_samples()) {
            return invalid(format!("selected bin {b} out of range {}", cir.num_samples()));
        }
        Ok(())
    }
}

/// Heart pulse waveform: amplitude in [0, 1] sampled at `rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hpw {
    pub samples: Vec<f64>,
    pub rate: f64,
}

impl Hpw {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

/// Chest displacement (m) for a phase (rad): `d = lambda / (4 pi) * phase`.
pub fn displacement_from_phase(phase: f64, config: &RadarConfig) -> Result<f64> {
    if !phase.is_finite() {
        return invalid(format!("phase must be finite, got {phase}"));
    }
    Ok(config.wavelength() / (4.0 * PI) * phase)
}

/// Inverse of [`displacement_from_phase`].
pub fn phase_from_displacement(displacement: f64, config: &RadarConfig) -> f64 {
    4.0 * PI / config.wavelength() * displacement
}

/// Elementwise modulus, bins x chirps.
pub fn magnitude(cir: &CirMatrix) -> RealMatrix {
    RealMatrix {
        data: cir.data().iter().map(|c| f64::from(c.norm())).collect(),
        rows: cir.num_samples(),
        cols: cir.num_chirps(),
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Remove 2 pi jumps so successive differences lie in (-pi, pi].
pub fn unwrap_phase(wrapped: &[f64]) -> Result<Vec<f64>> {
    let Some(&first) = wrapped.first() else {
        return invalid("cannot unwrap an empty sequence");
    };
    let mut out = Vec::with_capacity(wrapped.len());
    out.push(first);
    let mut correction = 0.0;
    for w in wrapped.windows(2) {
        let d = w[1] - w[0];
        if d <= -PI || d > PI {
            // whole turns only, so in-range differences are left untouched
            correction += 2.0 * PI * ((wrap_phase(d) - d) / (2.0 * PI)).round();
        }
        out.push(w[1] + correction);
    }
    Ok(out)
}

/// Unwrapped phase of the selected bin at every chirp.
pub fn phase_track(cir: &CirMatrix, sel: &BinSelection) -> Result<Vec<f64>> {
    sel.validate_for(cir)?;
    let wrapped: Vec<f64> = sel
        .bins
        .iter()
        .enumerate()
        .map(|(i, &b)| f64::from(cir.get(b, i).arg()))
        .collect();
    unwrap_phase(&wrapped)
}

/// Mean-pool `factor` consecutive complex samples of one slow-time series.
/// A trailing partial block is dropped.
pub fn decimate_series(x: &[Complex64], factor: usize) -> Vec<Complex64> {
    assert!(factor > 0);
    x.chunks_exact(factor)
        .map(|c| c.iter().sum::<Complex64>() / factor as f64)
        .collect()
}

/// Mean-pool a CIR recorded at the chirp rate down to `config.processing_rate`.
pub fn decimate(raw: &[Vec<Complex64>], config: RadarConfig) -> Result<CirMatrix> {
    config.validate()?;
    if raw.len() != config.samples_per_chirp {
        return invalid(format!(
            "raw CIR has {} bins, config says {}",
            raw.len(),
            config.samples_per_chirp
        ));
    }
    let factor = config.decimation();
    let frames = raw.first().map_or(0, |r| r.len() / factor);
    let mut data = Vec::with_capacity(raw.len() * frames);
    for row in raw {
        if row.len() / factor != frames {
            return invalid("raw CIR rows have unequal length");
        }
        data.extend(
            decimate_series(row, factor)
                .into_iter()
                .map(|c| Complex32::new(c.re as f32, c.im as f32)),
        );
    }
    CirMatrix::new(data, frames, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tiny_config(bins: usize) -> RadarConfig {
        RadarConfig { samples_per_chirp: bins, ..RadarConfig::default() }
    }

    #[test]
    fn config_defaults_derive_rates() {
        let c = RadarConfig::default();
        assert_relative_eq!(c.slow_time_rate(), 5000.0, epsilon = 1e-9);
        assert_eq!(c.decimation(), 25);
        c.validate().unwrap();
        let bad = RadarConfig { processing_rate: 300.0, ..c };
        assert!(bad.validate().is_err());
        let bad = RadarConfig { carrier_freq: -1.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn displacement_examples() {
        let c = RadarConfig::default();
        assert_eq!(displacement_from_phase(0.0, &c).unwrap(), 0.0);
        // lambda = c / 79 GHz, d(pi) = lambda / 4
        let lambda = 299_792_458.0 / 79e9;
        assert_relative_eq!(lambda, 3.795e-3, max_relative = 1e-3);
        let d = displacement_from_phase(PI, &c).unwrap();
        assert_relative_eq!(d, lambda / 4.0, max_relative = 1e-12);
        assert_relative_eq!(d, 9.487e-4, max_relative = 1e-3);
        assert_relative_eq!(displacement_from_phase(4.0 * PI, &c).unwrap(), lambda, max_relative = 1e-12);
        assert!(displacement_from_phase(f64::NAN, &c).is_err());
        assert!(displacement_from_phase(f64::INFINITY, &c).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let c = tiny_config(2);
        let cir = CirMatrix::new(
            vec![
                Complex32::new(3.0, 4.0),
                Complex32::new(0.0, 0.0),
                Complex32::new(1.0, 0.0),
                Complex32::new(0.0, -1.0),
            ],
            2,
            c,
        )
        .unwrap();
        let m = magnitude(&cir);
        assert_eq!(m.data, vec![5.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn unwrap_examples() {
        assert_eq!(unwrap_phase(&[0.0, 0.1, 0.2]).unwrap(), vec![0.0, 0.1, 0.2]);
        let u = unwrap_phase(&[3.0, -3.0]).unwrap();
        assert_eq!(u[0], 3.0);
        assert_relative_eq!(u[1], -3.0 + 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(u[1], 3.2832, epsilon = 1e-4);
        assert!(unwrap_phase(&[]).is_err());
    }

    #[test]
    fn phase_track_examples() {
        let c = tiny_config(3);
        let n = 50;
        let mut cir = CirMatrix::zeros(n, c).unwrap();
        for i in 0..n {
            cir.set(1, i, Complex32::new(1.0, 0.0));
        }
        let sel = BinSelection::constant(1, n);
        assert!(phase_track(&cir, &sel).unwrap().iter().all(|&p| p == 0.0));

        // ramp through several turns
        let theta: Vec<f64> = (0..n).map(|i| 0.4 * i as f64 - 1.0).collect();
        for (i, &t) in theta.iter().enumerate() {
            cir.set(2, i, Complex32::from_polar(1.0, t as f32));
        }
        let got = phase_track(&cir, &BinSelection::constant(2, n)).unwrap();
        for (g, t) in got.iter().zip(&theta) {
            assert!((g - t).abs() < 1e-5, "{g} vs {t}");
        }
        assert!(phase_track(&cir, &BinSelection::constant(3, n)).is_err());
        assert!(phase_track(&cir, &BinSelection::constant(0, n - 1)).is_err());
    }

    #[test]
    fn cir_rejects_bad_shapes() {
        let c = tiny_config(2);
        assert!(CirMatrix::new(vec![], 0, c).is_err());
        assert!(CirMatrix::new(vec![Complex32::new(0.0, 0.0); 3], 2, c).is_err());
        assert!(CirMatrix::new(vec![Complex32::new(f32::NAN, 0.0); 4], 2, c).is_err());
    }

    #[test]
    fn decimation_mean_pools() {
        let c = tiny_config(1);
        let raw = vec![(0..50).map(|i| Complex64::new(i as f64, 0.0)).collect::<Vec<_>>()];
        let cir = decimate(&raw, c).unwrap();
        assert_eq!(cir.num_chirps(), 2);
        assert_relative_eq!(f64::from(cir.get(0, 0).re), 12.0);
        assert_relative_eq!(f64::from(cir.get(0, 1).re), 37.0);
    }

    proptest! {
        #[test]
        fn displacement_is_linear(a in -50.0f64..50.0, phi in -100.0f64..100.0) {
            let c = RadarConfig::default();
            let lhs = displacement_from_phase(a * phi, &c).unwrap();
            let rhs = a * displacement_from_phase(phi, &c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn unwrap_bounds_and_equivalence(x in prop::collection::vec(-20.0f64..20.0, 1..64)) {
            let u = unwrap_phase(&x).unwrap();
            prop_assert_eq!(u[0], x[0]);
            for w in u.windows(2) {
                let d = w[1] - w[0];
                prop_assert!(d > -PI - 1e-9 && d <= PI + 1e-9);
            }
            for (a, b) in u.iter().zip(&x) {
                prop_assert!((wrap_phase(*a) - wrap_phase(*b)).abs() < 1e-9
                    || ((wrap_phase(*a) - wrap_phase(*b)).abs() - 2.0 * PI).abs() < 1e-9);
            }
        }
    }
}
