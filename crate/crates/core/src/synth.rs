//! Recording simulator.
//!
//! Produces CIR recordings with known R-peak trains. Healthy subjects have one
//! stable chest reflector whose vibration is locked to the R-peaks. Arrhythmic
//! subjects have 2-4 reflectors in nearby range bins: a semi-Markov dominance
//! process decides which one is strong at any time, and every contraction is
//! offset from its R-peak by a random per-beat, per-region jitter.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{Label, RecordingBundle};
use crate::error::{invalid, Result};
use crate::radar::{phase_from_displacement, CirMatrix, Hpw, RadarConfig};
use crate::seed;

/// Full width (between zero crossings of the central lobe) of the cardiac
/// displacement kernel, seconds.
pub const KERNEL_WIDTH: f64 = 0.060;
/// Default Gaussian width of heart pulse waveform targets, seconds.
pub const HPW_SIGMA: f64 = 0.040;
/// Shortest admissible RR interval, seconds.
pub const MIN_RR: f64 = 0.3;
/// Amplitude crossfade when dominance moves between regions, seconds.
const DOMINANCE_RAMP: f64 = 0.1;

fn default_p_premature() -> f64 {
    0.15
}
fn default_recessive_gain() -> f64 {
    0.1
}
fn default_clutter_db() -> f64 {
    -30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub kind: Label,
    /// bpm
    pub mean_hr: f64,
    /// RR jitter SD, ms
    pub hrv_sd: f64,
    pub n_regions: usize,
    pub region_bins: Vec<usize>,
    /// Mechanical delay of each region after the R-peak, seconds.
    #[serde(default)]
    pub region_delays: Vec<f64>,
    /// Mean dwell of the dominance process, seconds.
    pub dominance_dwell: f64,
    /// Replace the random dominance process by a fixed rotation through the
    /// regions every `scripted_dwell` seconds.
    #[serde(default)]
    pub scripted_dwell: Option<f64>,
    /// Amplitude factor applied to non-dominant regions (reflection and
    /// contraction strength alike).
    #[serde(default = "default_recessive_gain")]
    pub recessive_gain: f64,
    /// Per-beat contraction onset jitter SD, ms.
    pub contraction_jitter_sd: f64,
    /// Probability that a beat is premature.
    #[serde(default = "default_p_premature")]
    pub p_premature: f64,
    /// Hz
    pub resp_rate: f64,
    /// m
    pub resp_amp: f64,
    /// Peak cardiac displacement per region, m.
    pub heart_amp: Vec<f64>,
    /// Reflector-to-noise ratio per raw chirp, dB.
    pub noise_snr: f64,
    /// Static clutter level relative to a unit reflector, dB.
    #[serde(default = "default_clutter_db")]
    pub clutter_db: f64,
    pub seed: u64,
}

impl SubjectProfile {
    /// A randomized healthy subject (one stable region).
    pub fn healthy(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "profile"));
        Self {
            kind: Label::Healthy,
            mean_hr: rng.gen_range(67.0..97.0),
            hrv_sd: rng.gen_range(15.0..35.0),
            n_regions: 1,
            region_bins: vec![rng.gen_range(24..48)],
            region_delays: vec![0.0],
            dominance_dwell: 0.0,
            scripted_dwell: None,
            recessive_gain: default_recessive_gain(),
            contraction_jitter_sd: 0.0,
            p_premature: 0.0,
            resp_rate: rng.gen_range(0.2..0.33),
            resp_amp: rng.gen_range(1.0e-3..3.0e-3),
            heart_amp: vec![rng.gen_range(0.08e-3..0.15e-3)],
            noise_snr: 25.0,
            clutter_db: default_clutter_db(),
            seed,
        }
    }

    /// A randomized arrhythmic subject with 2-4 unstable regions.
    pub fn arrhythmia(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "profile"));
        let n_regions = rng.gen_range(2..=4);
        let center = rng.gen_range(26..46);
        let mut offsets: Vec<i64> = vec![-2, -1, 0, 1, 2];
        // partial Fisher-Yates: the first n_regions entries are a random subset
        for i in 0..n_regions {
            let j = rng.gen_range(i..offsets.len());
            offsets.swap(i, j);
        }
        let region_bins = offsets[..n_regions]
            .iter()
            .map(|o| (center as i64 + o) as usize)
            .collect();
        let region_delays = (0..n_regions)
            .map(|r| if r == 0 { 0.0 } else { rng.gen_range(-0.03..0.06) })
            .collect();
        let heart_amp = (0..n_regions).map(|_| rng.gen_range(0.08e-3..0.15e-3)).collect();
        Self {
            kind: Label::Arrhythmia,
            mean_hr: rng.gen_range(55.0..115.0),
            hrv_sd: rng.gen_range(50.0..90.0),
            n_regions,
            region_bins,
            region_delays,
            dominance_dwell: rng.gen_range(2.0..4.0),
            scripted_dwell: None,
            recessive_gain: default_recessive_gain(),
            contraction_jitter_sd: 7.0,
            p_premature: default_p_premature(),
            resp_rate: rng.gen_range(0.2..0.33),
            resp_amp: rng.gen_range(1.0e-3..3.0e-3),
            heart_amp,
            noise_snr: 25.0,
            clutter_db: default_clutter_db(),
            seed,
        }
    }

    pub fn for_label(label: Label, seed: u64) -> Self {
        match label {
            Label::Healthy => Self::healthy(seed),
            Label::Arrhythmia => Self::arrhythmia(seed),
        }
    }

    fn delay(&self, region: usize) -> f64 {
        self.region_delays.get(region).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(55.0..=115.0).contains(&self.mean_hr) {
            return invalid(format!("mean_hr {} outside [55, 115] bpm", self.mean_hr));
        }
        if self.n_regions == 0 || self.region_bins.len() != self.n_regions || self.heart_amp.len() != self.n_regions {
            return invalid("region_bins and heart_amp must have n_regions entries");
        }
        if !self.region_delays.is_empty() && self.region_delays.len() != self.n_regions {
            return invalid("region_delays must be empty or have n_regions entries");
        }
        let mut sorted = self.region_bins.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.n_regions {
            return invalid("region_bins must be distinct");
        }
        match self.kind {
            Label::Healthy => {
                if self.n_regions != 1 || self.contraction_jitter_sd != 0.0 {
                    return invalid("healthy profiles have one region and no contraction jitter");
                }
            }
            Label::Arrhythmia => {
                if !(2..=4).contains(&self.n_regions) {
                    return invalid("arrhythmia profiles have 2-4 regions");
                }
                if self.scripted_dwell.is_none() && !(self.dominance_dwell > 0.0) {
                    return invalid("dominance_dwell must be positive");
                }
            }
        }
        let nonneg = [
            ("hrv_sd", self.hrv_sd),
            ("contraction_jitter_sd", self.contraction_jitter_sd),
            ("resp_rate", self.resp_rate),
            ("resp_amp", self.resp_amp),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_premature) || !(0.0..=1.0).contains(&self.recessive_gain) {
            return invalid("p_premature and recessive_gain must lie in [0, 1]");
        }
        if self.heart_amp.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || !self.noise_snr.is_finite() {
            return invalid("heart_amp and noise_snr must be finite");
        }
        if let Some(d) = self.scripted_dwell {
            if !(d > 0.0) {
                return invalid("scripted_dwell must be positive");
            }
        }
        Ok(())
    }
}

/// Ground-truth heartbeat times, seconds, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RPeakTrain {
    pub times: Vec<f64>,
}

impl RPeakTrain {
    pub fn rr_intervals(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

fn draw_rr(rng: &mut ChaCha8Rng, noise: &Normal<f64>, base: f64) -> f64 {
    for _ in 0..64 {
        let rr = base + noise.sample(rng);
        if rr > MIN_RR {
            return rr;
        }
    }
    base.max(MIN_RR + 0.01)
}

/// Beat times over `[0, duration]`.
///
/// Healthy: RR = 60/mean_hr + N(0, hrv_sd). Arrhythmia additionally inserts
/// premature beats with probability `p_premature`: one RR shortened by
/// 25-40 % followed by a compensatory RR lengthened by the same amount.
pub fn gen_rr_sequence(profile: &SubjectProfile, duration: f64) -> Result<RPeakTrain> {
    profile.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return invalid(format!("duration must be positive, got {duration}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(profile.seed, "rr"));
    let base = 60.0 / profile.mean_hr;
    let noise = Normal::new(0.0, profile.hrv_sd / 1000.0).expect("finite sd");
    let mut times = Vec::new();
    let mut t = rng.gen_range(0.1..base.max(0.11));
    let mut pending_pause: Option<f64> = None;
    while t <= duration {
        times.push(t);
        let rr = if let Some(p) = pending_pause.take() {
            p
        } else if profile.kind == Label::Arrhythmia && rng.gen_bool(profile.p_premature) {
            let c = rng.gen_range(0.25..0.40);
            let short = draw_rr(&mut rng, &noise, base * (1.0 - c)).max(MIN_RR + 0.005);
            pending_pause = Some(2.0 * base - short + noise.sample(&mut rng) * 0.5);
            short
        } else {
            draw_rr(&mut rng, &noise, base)
        };
        t += rr.max(MIN_RR + 0.005);
    }
    Ok(RPeakTrain { times })
}

/// Cardiac displacement kernel: scaled second derivative of a Gaussian,
/// -1 at the contraction instant, zero crossings at +-KERNEL_WIDTH/2.
pub fn cardiac_kernel(u: f64) -> f64 {
    let s = KERNEL_WIDTH / 2.0;
    let z = u * u / (s * s);
    (z - 1.0) * (-0.5 * z).exp()
}

/// Per-beat contraction onsets of one region: R-peak + region delay + jitter.
fn contraction_times(rpeaks: &RPeakTrain, profile: &SubjectProfile, region: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_index(
        seed::derive(profile.seed, "jitter"),
        region as u64,
    ));
    let jitter = Normal::new(0.0, profile.contraction_jitter_sd / 1000.0).expect("finite sd");
    rpeaks
        .times
        .iter()
        .map(|&t| t + profile.delay(region) + jitter.sample(&mut rng))
        .collect()
}

/// Respiration and cardiac components of one region's displacement,
/// evaluated at `times`.
fn motion_components(
    rpeaks: &RPeakTrain,
    profile: &SubjectProfile,
    region: usize,
    times: &[f64],
    rate: f64,
) -> (Vec<f64>, Vec<f64>) {
    let resp = times
        .iter()
        .map(|&t| profile.resp_amp * (2.0 * PI * profile.resp_rate * t).sin())
        .collect();
    let mut cardiac = vec![0.0; times.len()];
    let amp = profile.heart_amp[region];
    let t0 = times.first().copied().unwrap_or(0.0);
    let reach = 5.0 * KERNEL_WIDTH;
    for c in contraction_times(rpeaks, profile, region) {
        let lo = (((c - reach - t0) * rate).floor().max(0.0)) as usize;
        let hi = ((((c + reach - t0) * rate).ceil()).max(0.0) as usize).min(times.len());
        for i in lo..hi {
            cardiac[i] += amp * cardiac_kernel(times[i] - c);
        }
    }
    (resp, cardiac)
}

/// Displacement (m) of one chest region sampled at `rate` from t = 0.
pub fn gen_chest_motion(
    rpeaks: &RPeakTrain,
    profile: &SubjectProfile,
    region: usize,
    rate: f64,
    duration: f64,
) -> Result<Vec<f64>> {
    if rate < 100.0 {
        return invalid(format!("motion rate must be >= 100 Hz, got {rate}"));
    }
    if region >= profile.n_regions || region >= profile.heart_amp.len() {
        return invalid(format!("region {region} out of range"));
    }
    let n = (duration * rate).round() as usize;
    let times: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
    let (resp, cardiac) = motion_components(rpeaks, profile, region, &times, rate);
    Ok(resp.iter().zip(&cardiac).map(|(a, b)| a + b).collect())
}

/// Piecewise-constant dominance schedule: (start time, dominant region).
fn dominance_schedule(profile: &SubjectProfile, duration: f64) -> Vec<(f64, usize)> {
    let n = profile.n_regions;
    if n == 1 {
        return vec![(0.0, 0)];
    }
    if let Some(dwell) = profile.scripted_dwell {
        let count = (duration / dwell).ceil() as usize + 1;
        return (0..count).map(|k| (k as f64 * dwell, k % n)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(profile.seed, "dominance"));
    let exp = Exp::new(1.0 / profile.dominance_dwell).expect("positive dwell");
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut region = rng.gen_range(0..n);
    while t < duration {
        out.push((t, region));
        t += exp.sample(&mut rng).max(0.25);
        let step = rng.gen_range(1..n);
        region = (region + step) % n;
    }
    out
}

/// Amplitude weight of every region at time `t` (crossfaded schedule).
fn dominance_weights(schedule: &[(f64, usize)], n: usize, recessive: f64, t: f64) -> Vec<f64> {
    let mut w = vec![recessive; n];
    if n == 1 {
        w[0] = 1.0;
        return w;
    }
    let idx = schedule.partition_point(|&(s, _)| s <= t).saturating_sub(1);
    let (start, cur) = schedule[idx];
    let half = DOMINANCE_RAMP / 2.0;
    let mut share = vec![0.0; n];
    if idx > 0 && t - start < half {
        // blending in from the previous region
        let f = 0.5 + (t - start) / DOMINANCE_RAMP;
        share[cur] += f;
        share[schedule[idx - 1].1] += 1.0 - f;
    } else if let Some(&(next_start, next)) = schedule.get(idx + 1).filter(|(s, _)| s - t < half) {
        let f = 0.5 + (next_start - t) / DOMINANCE_RAMP;
        share[cur] += f;
        share[next] += 1.0 - f;
    } else {
        share[cur] = 1.0;
    }
    for (wi, s) in w.iter_mut().zip(share) {
        *wi = recessive + (1.0 - recessive) * s;
    }
    w
}

/// Synthesize a recording at `config.processing_rate`.
///
/// Region reflectors are evaluated at the raw chirp rate and mean-pooled to
/// the processing rate. Receiver noise is drawn directly at the processing
/// rate with its variance divided by the decimation factor, which has the
/// same distribution as pooling raw-rate white noise.
pub fn gen_cir(profile: &SubjectProfile, config: &RadarConfig, duration: f64) -> Result<RecordingBundle> {
    profile.validate()?;
    config.validate()?;
    if let Some(&b) = profile.region_bins.iter().find(|&&b| b >= config.samples_per_chirp) {
        return invalid(format!("region bin {b} outside 0..{}", config.samples_per_chirp));
    }
    let rpeaks = gen_rr_sequence(profile, duration)?;
    let frames = (duration * config.processing_rate).round() as usize;
    if frames == 0 {
        return invalid("duration shorter than one frame");
    }
    let decim = config.decimation();
    let raw_rate = config.processing_rate * decim as f64;
    let lambda_phase = phase_from_displacement(1.0, config);

    let n_raw = frames * decim;
    // raw sample i belongs to frame i / decim; frames are centered on k / processing_rate
    let offset = (decim as f64 - 1.0) / 2.0;
    let times: Vec<f64> = (0..n_raw).map(|i| (i as f64 - offset) / raw_rate).collect();

    let schedule = dominance_schedule(profile, duration);
    let n = profile.n_regions;
    let weights: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| dominance_weights(&schedule, n, profile.recessive_gain, t))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(profile.seed, "cir"));
    let bins = config.samples_per_chirp;
    let mut data = vec![Complex32::new(0.0, 0.0); bins * frames];

    for r in 0..n {
        let (resp, cardiac) = motion_components(&rpeaks, profile, r, &times, raw_rate);
        let theta0 = rng.gen_range(-PI..PI);
        let row = &mut data[profile.region_bins[r] * frames..(profile.region_bins[r] + 1) * frames];
        for (k, out) in row.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in k * decim..(k + 1) * decim {
                let w = weights[i][r];
                let phase = theta0 + lambda_phase * (resp[i] + w * cardiac[i]);
                acc += Complex64::from_polar(w, phase);
            }
            acc /= decim as f64;
            *out = Complex32::new(acc.re as f32, acc.im as f32);
        }
    }

    let clutter_amp = 10f64.powf(profile.clutter_db / 20.0);
    for b in (0..bins).filter(|b| !profile.region_bins.contains(b)) {
        let c = Complex64::from_polar(clutter_amp * rng.gen_range(0.5..1.5), rng.gen_range(-PI..PI));
        for v in &mut data[b * frames..(b + 1) * frames] {
            *v = Complex32::new(c.re as f32, c.im as f32);
        }
    }

    let noise_sd = (10f64.powf(-profile.noise_snr / 10.0) / 2.0 / decim as f64).sqrt();
    let noise = Normal::new(0.0, noise_sd).expect("finite noise");
    for v in &mut data {
        v.re += noise.sample(&mut rng) as f32;
        v.im += noise.sample(&mut rng) as f32;
    }

    let dominant_bins = (0..frames)
        .map(|k| {
            let w = &weights[k * decim + decim / 2];
            let r = (0..n).fold(0, |best, j| if w[j] > w[best] { j } else { best });
            profile.region_bins[r]
        })
        .collect();

    let bundle = RecordingBundle {
        cir: CirMatrix::new(data, frames, *config)?,
        r_peaks: rpeaks.times,
        label: profile.kind,
        subject_profile: profile.clone(),
        duration,
        dominant_bins,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Gaussian pulse train `h(t) = min(1, sum_k exp(-(t - t_k)^2 / (2 sigma^2)))`
/// sampled at `t = i / rate`, `i < num_samples`.
pub fn gen_hpw_target(rpeaks: &[f64], rate: f64, sigma: f64, num_samples: usize) -> Result<Hpw> {
    if !(sigma > 0.0) || !(rate > 0.0) {
        return invalid("sigma and rate must be positive");
    }
    let mut samples = vec![0.0; num_samples];
    let reach = 8.0 * sigma;
    for &tk in rpeaks {
        let lo = ((tk - reach) * rate).floor().max(0.0) as usize;
        let hi = (((tk + reach) * rate).ceil().max(0.0) as usize).min(num_samples);
        for (i, s) in samples.iter_mut().enumerate().take(hi).skip(lo) {
            let d = i as f64 / rate - tk;
            *s += (-d * d / (2.0 * sigma * sigma)).exp();
        }
    }
    for s in &mut samples {
        *s = s.min(1.0);
    }
    Ok(Hpw { samples, rate })
}

/// Draw `count` profiles of each label with seeds derived from `master`.
pub fn cohort_profiles(master: u64, healthy: usize, arrhythmic: usize) -> Vec<SubjectProfile> {
    let mut out = Vec::with_capacity(healthy + arrhythmic);
    for i in 0..healthy {
        out.push(SubjectProfile::healthy(seed::derive_index(seed::derive(master, "healthy"), i as u64)));
    }
    for i in 0..arrhythmic {
        out.push(SubjectProfile::arrhythmia(seed::derive_index(seed::derive(master, "arrhythmia"), i as u64)));
    }
    out
}
