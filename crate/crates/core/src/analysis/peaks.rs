use crate::radar::Hpw;

/// Default detection threshold, HPW amplitude units.
pub const DEFAULT_MIN_HEIGHT: f64 = 0.4;
/// Default refractory period, seconds.
pub const DEFAULT_REFRACTORY: f64 = 0.3;

/// Sub-sample offset of a peak from a Gaussian (log-parabolic) fit through
/// three samples. Exact for sampled Gaussian pulses.
fn gaussian_offset(prev: f64, mid: f64, next: f64) -> f64 {
    if prev <= 0.0 || mid <= 0.0 || next <= 0.0 {
        return 0.0;
    }
    let (l, c, r) = (prev.ln(), mid.ln(), next.ln());
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Beat times (s) of a pulse waveform.
///
/// Candidates are interior local maxima above `min_height`. Candidates closer
/// than `refractory` seconds conflict; the higher one wins, ties to the
/// earlier. Reported times are refined to sub-sample precision.
pub fn detect_peaks(hpw: &Hpw, min_height: f64, refractory: f64) -> Vec<f64> {
    let y = &hpw.samples;
    if y.len() < 3 || !(refractory > 0.0) {
        return Vec::new();
    }
    let mut candidates: Vec<(usize, f64)> = (1..y.len() - 1)
        .filter(|&i| y[i] > min_height && y[i] > y[i - 1] && y[i] >= y[i + 1])
        .map(|i| (i, (i as f64 + gaussian_offset(y[i - 1], y[i], y[i + 1])) / hpw.rate))
        .collect();
    // highest first, earlier first among equals
    candidates.sort_by(|a, b| y[b.0].total_cmp(&y[a.0]).then(a.0.cmp(&b.0)));
    let mut accepted: Vec<f64> = Vec::new();
    for (_, t) in candidates {
        if accepted.iter().all(|&a| (a - t).abs() >= refractory) {
            accepted.push(t);
        }
    }
    accepted.sort_by(f64::total_cmp);
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_hpw_target;

    #[test]
    fn single_pulse() {
        let h = gen_hpw_target(&[1.0], 200.0, 0.04, 400).unwrap();
        let p = detect_peaks(&h, 0.4, 0.3);
        assert_eq!(p.len(), 1);
        assert!((p[0] - 1.0).abs() <= 1.0 / 200.0);
    }

    #[test]
    fn sub_sample_refinement_is_exact_for_gaussians() {
        let h = gen_hpw_target(&[1.0013, 2.4567], 200.0, 0.04, 800).unwrap();
        let p = detect_peaks(&h, 0.4, 0.3);
        assert!((p[0] - 1.0013).abs() < 1e-9 && (p[1] - 2.4567).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn regular_train_spacing() {
        let beats: Vec<f64> = (1..20).map(|k| 0.8 * k as f64).collect();
        let h = gen_hpw_target(&beats, 200.0, 0.04, 200 * 17).unwrap();
        let p = detect_peaks(&h, 0.4, 0.3);
        assert_eq!(p.len(), 19);
        for w in p.windows(2) {
            let samples = (w[1] - w[0]) * 200.0;
            assert!((samples - 160.0).abs() <= 1.0);
        }
    }

    #[test]
    fn refractory_keeps_the_higher_pulse() {
        let mut h = gen_hpw_target(&[1.0], 200.0, 0.02, 400).unwrap();
        let second = gen_hpw_target(&[1.1], 200.0, 0.02, 400).unwrap();
        for (a, b) in h.samples.iter_mut().zip(&second.samples) {
            *a = a.max(0.8 * b);
        }
        let p = detect_peaks(&h, 0.4, 0.25);
        assert_eq!(p.len(), 1);
        assert!((p[0] - 1.0).abs() < 0.006);
        // equal heights: earlier wins
        let mut h = gen_hpw_target(&[1.0], 200.0, 0.02, 400).unwrap();
        for (a, b) in h.samples.iter_mut().zip(&second.samples) {
            *a = a.max(*b);
        }
        let p = detect_peaks(&h, 0.4, 0.25);
        assert_eq!(p.len(), 1);
        assert!((p[0] - 1.0).abs() < 0.006);
    }

    #[test]
    fn threshold_and_degenerate_inputs() {
        let mut h = gen_hpw_target(&[1.0], 200.0, 0.04, 400).unwrap();
        for v in &mut h.samples {
            *v *= 0.3;
        }
        assert!(detect_peaks(&h, 0.4, 0.3).is_empty());
        assert!(detect_peaks(&Hpw { samples: vec![1.0], rate: 200.0 }, 0.4, 0.3).is_empty());
    }
}
