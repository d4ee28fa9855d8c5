use cardiodx_core::io::{load_bundle, save_bundle};
use cardiodx_core::synth::{gen_cir, SubjectProfile};
use cardiodx_core::RadarConfig;

#[test]
fn bundle_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = gen_cir(&SubjectProfile::arrhythmia(3), &RadarConfig::default(), 8.0).unwrap();
    save_bundle(&b, dir.path().join("rec")).unwrap();
    let back = load_bundle(dir.path().join("rec")).unwrap();
    assert_eq!(back.cir, b.cir);
    assert_eq!(back.r_peaks, b.r_peaks);
    assert_eq!(back.label, b.label);
    assert_eq!(back.subject_profile, b.subject_profile);
    assert_eq!(back.dominant_bins, b.dominant_bins);
}
