use cardiodx_core::ptl::{ptl, PtlParams};
use cardiodx_core::radar::RadarConfig;
use cardiodx_core::sigproc::{
    build_features, neighbourhood_bounds, raw_features, second_derivative, CH_PHASE_D2, NUM_CHANNELS,
};
use cardiodx_core::synth::{gen_cir, SubjectProfile};
use proptest::prelude::*;

#[test]
fn acceleration_peaks_at_beats() {
    let cfg = RadarConfig::default();
    let rate = cfg.processing_rate;
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..4 {
        let b = gen_cir(&SubjectProfile::healthy(seed), &cfg, 30.0).unwrap();
        let bin = b.dominant_bins[0];
        let block = raw_features(&b.cir, bin, bin).unwrap();
        let d2 = block.channel(0, CH_PHASE_D2);
        let tol = (0.030 * rate).round() as i64;
        for (k, &t) in b.r_peaks.iter().enumerate() {
            // strongest sample within half an interval either side
            let prev = if k > 0 { b.r_peaks[k - 1] } else { t - 0.5 };
            let next = b.r_peaks.get(k + 1).copied().unwrap_or(t + 0.5);
            let lo = (((t + prev) / 2.0 * rate).ceil().max(0.0)) as usize;
            let hi = (((t + next) / 2.0 * rate).floor() as usize).min(d2.len() - 1);
            if hi <= lo + 2 * tol as usize {
                continue;
            }
            let best = (lo..=hi).fold(lo, |m, i| if d2[i] > d2[m] { i } else { m });
            total += 1;
            if (best as i64 - (t * rate).round() as i64).abs() <= tol {
                hits += 1;
            }
        }
    }
    let frac = hits as f64 / total as f64;
    assert!(frac >= 0.9, "{hits}/{total}");
}

#[test]
fn feature_shape_follows_neighbourhood() {
    let cfg = RadarConfig::default();
    let b = gen_cir(&SubjectProfile::arrhythmia(3), &cfg, 10.0).unwrap();
    let params = PtlParams::default();
    let sel = ptl(&b.cir, &params).unwrap();
    let block = build_features(&b.cir, &sel, &params).unwrap();
    assert_eq!(block.shape(), (params.w_b, (10.0 * cfg.processing_rate) as usize, NUM_CHANNELS));
    assert!(block.data.iter().all(|v| v.is_finite()));
    assert_eq!(block, build_features(&b.cir, &sel, &params).unwrap());
}

#[test]
fn reordering_bins_reorders_rows() {
    let cfg = RadarConfig::default();
    let b = gen_cir(&SubjectProfile::arrhythmia(5), &cfg, 8.0).unwrap();
    let (first, last) = neighbourhood_bounds(&b.cir, &PtlParams::default()).unwrap();
    let block = raw_features(&b.cir, first, last).unwrap();
    let n = block.num_bins();
    let order: Vec<usize> = (0..n).rev().collect();
    let moved = block.select_rows(&order);
    for (new, &old) in order.iter().enumerate() {
        assert_eq!(moved.bin(new), block.bin(old));
    }
}

proptest! {
    #[test]
    fn second_derivative_is_linear(
        x in proptest::collection::vec(-10.0f64..10.0, 7..64),
        c in -3.0f64..3.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.5 + i as f64).collect();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| c * a + b).collect();
        let dx = second_derivative(&x, 0.005).unwrap();
        let dy = second_derivative(&y, 0.005).unwrap();
        let ds = second_derivative(&sum, 0.005).unwrap();
        for i in 0..x.len() {
            let expect = c * dx[i] + dy[i];
            prop_assert!((ds[i] - expect).abs() <= 1e-9 * (1.0 + expect.abs()) * 4e4);
        }
    }

    #[test]
    fn quadratics_have_constant_second_derivative(
        a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, n in 7usize..40,
    ) {
        let x: Vec<f64> = (0..n).map(|t| { let t = t as f64; a * t * t + b * t + c }).collect();
        let d = second_derivative(&x, 1.0).unwrap();
        for v in &d[3..n - 3] {
            prop_assert!((v - 2.0 * a).abs() < 1e-9);
        }
    }
}
