//! Feature extraction: clutter bandpass, smoothed second derivative, and the
//! three-channel per-bin feature block fed to the reconstruction network.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ptl::{neighbourhood_around, PtlParams};
use crate::radar::{magnitude, unwrap_phase, BinSelection, CirMatrix};

pub const NUM_CHANNELS: usize = 3;
pub const CH_PHASE_BP: usize = 0;
pub const CH_PHASE_D2: usize = 1;
pub const CH_MAG_BP: usize = 2;

/// Clutter filter band, Hz.
pub const CLUTTER_LO: f64 = 0.2;
pub const CLUTTER_HI: f64 = 50.0;

/// Standard deviation below which a channel is treated as constant.
const ZERO_VARIANCE: f64 = 1e-9;

/// Direct-form II transposed biquad coefficients, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter state that makes the section start in steady state for a
    /// constant input `u`.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let z2 = self.b[2] * u - self.a[1] * y;
        let z1 = self.b[1] * u - self.a[0] * y + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Q factors of the conjugate pole pairs of an even-order Butterworth prototype.
fn butterworth_q(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).cos()))
        .collect()
}

fn bilinear_section(fc: f64, rate: f64, q: f64, highpass: bool) -> Biquad {
    let k = (PI * fc / rate).tan();
    let norm = 1.0 / (1.0 + k / q + k * k);
    let b0 = if highpass { norm } else { k * k * norm };
    let b1 = if highpass { -2.0 * b0 } else { 2.0 * b0 };
    Biquad {
        b: [b0, b1, b0],
        a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
    }
}

/// Butterworth band-pass as cascaded second-order sections: a 4th-order
/// high-pass at `lo` followed by a 4th-order low-pass at `hi`.
pub fn butterworth_bandpass(lo: f64, hi: f64, rate: f64) -> Result<Vec<Biquad>> {
    if !(lo > 0.0 && lo < hi && hi < rate / 2.0) {
        return invalid(format!("bandpass needs 0 < lo < hi < rate/2, got lo={lo} hi={hi} rate={rate}"));
    }
    let qs = butterworth_q(4);
    let mut sections: Vec<Biquad> = qs.iter().map(|&q| bilinear_section(lo, rate, q, true)).collect();
    sections.extend(qs.iter().map(|&q| bilinear_section(hi, rate, q, false)));
    Ok(sections)
}

fn sos_pass(sections: &[Biquad], x: &mut [f64]) {
    let Some(&first) = x.first() else { return };
    let mut level = first;
    for s in sections {
        s.run(x, s.steady_state(level));
        level *= s.dc_gain();
    }
}

/// Forward-backward filtering with odd reflection padding and steady-state
/// initial conditions.
pub fn filtfilt(sections: &[Biquad], x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    sos_pass(sections, &mut ext);
    ext.reverse();
    sos_pass(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass(x: &[f64], lo: f64, hi: f64, rate: f64) -> Result<Vec<f64>> {
    let sections = butterworth_bandpass(lo, hi, rate)?;
    let padlen = (rate / lo).ceil() as usize;
    Ok(filtfilt(&sections, x, padlen))
}

/// Seven-point smoothed second derivative:
///
/// `y_t = [(x_{t-3} + x_{t+3}) + 2(x_{t-2} + x_{t+2}) - (x_{t-1} + x_{t+1}) - 4 x_t] / (16 h^2)`
///
/// The first and last three outputs use edge-replicated inputs.
pub fn second_derivative(phi: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = phi.len();
    if n < 7 {
        return invalid(format!("second_derivative needs at least 7 samples, got {n}"));
    }
    if !(h > 0.0) {
        return invalid("sampling interval must be positive");
    }
    let scale = 1.0 / (16.0 * h * h);
    let at = |i: isize| phi[i.clamp(0, n as isize - 1) as usize];
    Ok((0..n as isize)
        .map(|t| {
            ((at(t - 3) + at(t + 3)) + 2.0 * (at(t - 2) + at(t + 2)) - (at(t - 1) + at(t + 1)) - 4.0 * at(t))
                * scale
        })
        .collect())
}

/// How channels are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One mean/SD per channel type over every bin, keeping relative bin
    /// strength visible to the network.
    Joint,
    /// Separate mean/SD for every bin and channel.
    #[default]
    PerBin,
}

/// Per-bin phase / acceleration / magnitude channels, bins x steps x 3.
///
/// Stored as `[bin][channel][step]` so each channel is a contiguous series.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub data: Vec<f64>,
    num_bins: usize,
    num_steps: usize,
    pub rate: f64,
    /// Offset of every row from the first bin of the neighbourhood.
    pub bin_offsets: Vec<i64>,
}

impl FeatureBlock {
    pub fn zeros(num_bins: usize, num_steps: usize, rate: f64, bin_offsets: Vec<i64>) -> Self {
        Self {
            data: vec![0.0; num_bins * NUM_CHANNELS * num_steps],
            num_bins,
            num_steps,
            rate,
            bin_offsets,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.num_bins, self.num_steps, NUM_CHANNELS)
    }

    pub fn channel(&self, bin: usize, ch: usize) -> &[f64] {
        let start = (bin * NUM_CHANNELS + ch) * self.num_steps;
        &self.data[start..start + self.num_steps]
    }

    pub fn channel_mut(&mut self, bin: usize, ch: usize) -> &mut [f64] {
        let start = (bin * NUM_CHANNELS + ch) * self.num_steps;
        &mut self.data[start..start + self.num_steps]
    }

    /// All channels of one bin, `[channel][step]`.
    pub fn bin(&self, bin: usize) -> &[f64] {
        let len = NUM_CHANNELS * self.num_steps;
        &self.data[bin * len..(bin + 1) * len]
    }

    /// Z-score every channel. Channels with (near) zero variance are zeroed.
    pub fn normalize(&mut self, mode: Normalization) {
        let groups: Vec<Vec<usize>> = match mode {
            Normalization::Joint => (0..NUM_CHANNELS)
                .map(|c| (0..self.num_bins).map(|b| b * NUM_CHANNELS + c).collect())
                .collect(),
            Normalization::PerBin => (0..self.num_bins * NUM_CHANNELS).map(|i| vec![i]).collect(),
        };
        let t = self.num_steps;
        for group in groups {
            let count = (group.len() * t) as f64;
            let mean = group.iter().flat_map(|&g| &self.data[g * t..(g + 1) * t]).sum::<f64>() / count;
            let var = group
                .iter()
                .flat_map(|&g| &self.data[g * t..(g + 1) * t])
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / count;
            let sd = var.sqrt();
            for &g in &group {
                for v in &mut self.data[g * t..(g + 1) * t] {
                    *v = if sd > ZERO_VARIANCE { (*v - mean) / sd } else { 0.0 };
                }
            }
        }
    }

    /// Keep a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::zeros(
            rows.len(),
            self.num_steps,
            self.rate,
            rows.iter().map(|&r| self.bin_offsets[r]).collect(),
        );
        let len = NUM_CHANNELS * self.num_steps;
        for (i, &r) in rows.iter().enumerate() {
            out.data[i * len..(i + 1) * len].copy_from_slice(self.bin(r));
        }
        out
    }

    /// Single-row block whose every step takes the channels of `rows[step]`.
    pub fn stitch(&self, rows: &[usize]) -> Result<Self> {
        if rows.len() != self.num_steps || rows.iter().any(|&r| r >= self.num_bins) {
            return invalid("stitch rows must give one valid row per step");
        }
        let mut out = Self::zeros(1, self.num_steps, self.rate, vec![0]);
        for c in 0..NUM_CHANNELS {
            let dst = (c * self.num_steps)..((c + 1) * self.num_steps);
            for (t, &r) in rows.iter().enumerate() {
                out.data[dst.start + t] = self.channel(r, c)[t];
            }
        }
        Ok(out)
    }

    /// Time slice `[start, start + len)` of every channel.
    pub fn slice_steps(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(self.num_bins, len, self.rate, self.bin_offsets.clone());
        for b in 0..self.num_bins {
            for c in 0..NUM_CHANNELS {
                out.channel_mut(b, c).copy_from_slice(&self.channel(b, c)[start..start + len]);
            }
        }
        out
    }
}

/// Un-normalized channels of one complex slow-time series.
pub fn bin_channels(row: &[num_complex::Complex32], rate: f64) -> Result<[Vec<f64>; NUM_CHANNELS]> {
    let wrapped: Vec<f64> = row.iter().map(|c| f64::from(c.arg())).collect();
    let phase = unwrap_phase(&wrapped)?;
    let phase_bp = bandpass(&phase, CLUTTER_LO, CLUTTER_HI, rate)?;
    let phase_d2 = second_derivative(&phase_bp, 1.0 / rate)?;
    let mag: Vec<f64> = row.iter().map(|c| f64::from(c.norm())).collect();
    let mag_bp = bandpass(&mag, CLUTTER_LO, CLUTTER_HI, rate)?;
    Ok([phase_bp, phase_d2, mag_bp])
}

/// Raw (un-normalized) channels of every bin in `first..=last`.
pub fn raw_features(cir: &CirMatrix, first: usize, last: usize) -> Result<FeatureBlock> {
    if first > last || last >= cir.num_samples() {
        return invalid(format!("bin range {first}..={last} invalid"));
    }
    let m = last - first + 1;
    let mut block = FeatureBlock::zeros(
        m,
        cir.num_chirps(),
        cir.config.processing_rate,
        (0..m as i64).collect(),
    );
    for (i, bin) in (first..=last).enumerate() {
        let chans = bin_channels(cir.row(bin), cir.config.processing_rate)?;
        for (c, series) in chans.into_iter().enumerate() {
            block.channel_mut(i, c).copy_from_slice(&series);
        }
    }
    Ok(block)
}

/// Neighbourhood features for the reconstruction network.
///
/// The neighbourhood is the tracker's window around the most common bin;
/// `sel` must lie inside it. Returns the normalized block and the absolute
/// index of its first bin.
pub fn build_features_with(
    cir: &CirMatrix,
    sel: &BinSelection,
    params: &PtlParams,
    mode: Normalization,
) -> Result<(FeatureBlock, usize)> {
    sel.validate_for(cir)?;
    let (_, hood) = crate::ptl::neighbourhood(cir, params)?;
    let (first, last) = (*hood.start(), *hood.end());
    if let Some(b) = sel.bins.iter().find(|b| !hood.contains(b)) {
        return invalid(format!("selected bin {b} outside neighbourhood {first}..={last}"));
    }
    let mut block = raw_features(cir, first, last)?;
    block.normalize(mode);
    Ok((block, first))
}

pub fn build_features(cir: &CirMatrix, sel: &BinSelection, params: &PtlParams) -> Result<FeatureBlock> {
    build_features_with(cir, sel, params, Normalization::default()).map(|(b, _)| b)
}

/// Neighbourhood bounds without computing features.
pub fn neighbourhood_bounds(cir: &CirMatrix, params: &PtlParams) -> Result<(usize, usize)> {
    let m = magnitude(cir);
    let t = crate::ptl::most_common_bin(&m)?;
    let hood = neighbourhood_around(t, params.w_b, m.rows);
    Ok((*hood.start(), *hood.end()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadarConfig;
    use approx::assert_relative_eq;
    use num_complex::Complex32;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    /// Steady-state amplitude over the middle half.
    /// Amplitude of a steady-state sinusoid from the RMS of its middle half.
    fn mid_amplitude(y: &[f64]) -> f64 {
        let n = y.len();
        let mid = &y[n / 4..3 * n / 4];
        (2.0 * mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt()
    }

    #[test]
    fn dc_is_rejected() {
        let x = vec![3.7; 4000];
        let y = bandpass(&x, 0.2, 50.0, 200.0).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-3 * 3.7), "max {}", mid_amplitude(&y));
    }

    #[test]
    fn passband_and_stopband() {
        let rate = 200.0;
        let y = bandpass(&sine(1.0, rate, 6000), 0.2, 50.0, rate).unwrap();
        let a = mid_amplitude(&y);
        assert!((0.89..=1.12).contains(&a), "1 Hz amplitude {a}");
        let y = bandpass(&sine(80.0, rate, 6000), 0.2, 50.0, rate).unwrap();
        assert!(mid_amplitude(&y) <= 0.1);
    }

    #[test]
    fn band_edges_meet_tolerances() {
        let (lo, hi, rate) = (0.2, 50.0, 200.0);
        let n = 40_000;
        for f in [2.0 * lo, 1.0, 10.0, 0.8 * hi] {
            let a = mid_amplitude(&bandpass(&sine(f, rate, n), lo, hi, rate).unwrap());
            let db = 20.0 * a.log10();
            assert!(db.abs() <= 1.0, "{f} Hz gain {db} dB");
        }
        for f in [lo / 2.0, (1.6 * hi).min(rate / 2.0 - 1.0)] {
            let a = mid_amplitude(&bandpass(&sine(f, rate, n), lo, hi, rate).unwrap());
            assert!(20.0 * a.log10() <= -20.0, "{f} Hz leaks {a}");
        }
    }

    #[test]
    fn bandpass_rejects_bad_band() {
        assert!(bandpass(&[0.0; 10], 0.0, 50.0, 200.0).is_err());
        assert!(bandpass(&[0.0; 10], 60.0, 50.0, 200.0).is_err());
        assert!(bandpass(&[0.0; 10], 0.2, 100.0, 200.0).is_err());
    }

    #[test]
    fn bandpass_is_nearly_idempotent_in_band() {
        let x: Vec<f64> = sine(1.3, 200.0, 4000)
            .iter()
            .zip(sine(7.0, 200.0, 4000))
            .map(|(a, b)| a + 0.5 * b)
            .collect();
        let once = bandpass(&x, 0.2, 50.0, 200.0).unwrap();
        let twice = bandpass(&once, 0.2, 50.0, 200.0).unwrap();
        let err = once[1000..3000]
            .iter()
            .zip(&twice[1000..3000])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn second_derivative_examples() {
        let c = second_derivative(&[2.5; 12], 0.005).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        let ramp: Vec<f64> = (0..12).map(|t| t as f64).collect();
        let d = second_derivative(&ramp, 1.0).unwrap();
        assert!(d[3..9].iter().all(|&v| v.abs() < 1e-12));
        let quad: Vec<f64> = (0..12).map(|t| (t * t) as f64).collect();
        let d = second_derivative(&quad, 1.0).unwrap();
        for v in &d[3..9] {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-12);
        }
        assert!(second_derivative(&[0.0; 6], 1.0).is_err());
    }

    #[test]
    fn second_derivative_scales_with_interval() {
        let h = 0.005;
        let quad: Vec<f64> = (0..20).map(|t| (t as f64 * h).powi(2)).collect();
        let d = second_derivative(&quad, h).unwrap();
        for v in &d[3..17] {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_cir_gives_zero_features() {
        let config = RadarConfig { samples_per_chirp: 4, ..RadarConfig::default() };
        let mut cir = CirMatrix::zeros(400, config).unwrap();
        for c in 0..400 {
            cir.set(2, c, Complex32::new(1.0, 0.5));
        }
        let sel = BinSelection::constant(2, 400);
        let block = build_features(&cir, &sel, &PtlParams { w_t: 100, w_b: 1 }).unwrap();
        assert_eq!(block.shape(), (1, 400, 3));
        assert!(block.data.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn normalization_modes() {
        let mut block = FeatureBlock::zeros(2, 4, 200.0, vec![0, 1]);
        block.channel_mut(0, 0).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        block.channel_mut(1, 0).copy_from_slice(&[10.0, 20.0, 30.0, 40.0]);
        let mut joint = block.clone();
        joint.normalize(Normalization::Joint);
        let all: Vec<f64> = [joint.channel(0, 0), joint.channel(1, 0)].concat();
        let mean = all.iter().sum::<f64>() / 8.0;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(joint.channel(1, 0)[3] > joint.channel(0, 0)[3]);
        let mut per = block.clone();
        per.normalize(Normalization::PerBin);
        for (a, b) in per.channel(0, 0).iter().zip(per.channel(1, 0)) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert!(per.channel(0, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stitch_and_select() {
        let mut block = FeatureBlock::zeros(3, 4, 200.0, vec![0, 1, 2]);
        for b in 0..3 {
            for c in 0..NUM_CHANNELS {
                for (t, v) in block.channel_mut(b, c).iter_mut().enumerate() {
                    *v = (100 * b + 10 * c + t) as f64;
                }
            }
        }
        let s = block.stitch(&[0, 2, 2, 1]).unwrap();
        assert_eq!(s.channel(0, 1), &[10.0, 211.0, 212.0, 113.0]);
        let r = block.select_rows(&[2, 0]);
        assert_eq!(r.channel(0, 0), block.channel(2, 0));
        assert_eq!(r.bin_offsets, vec![2, 0]);
        assert!(block.stitch(&[0, 3, 0, 0]).is_err());
    }
}
