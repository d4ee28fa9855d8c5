use cardiodx_hprnet::checkpoint::{load_checkpoint, save_checkpoint};
use cardiodx_hprnet::{train, ArchConfig, HprNet, Sample, Seq, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pulse_sample(len: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beats: Vec<f64> = (0..len).step_by(40).map(|t| t as f64 + rng.gen_range(0.0..10.0)).collect();
    let target: Vec<f64> = (0..len)
        .map(|t| beats.iter().map(|&b| (-(t as f64 - b).powi(2) / 32.0).exp()).sum::<f64>().min(1.0))
        .collect();
    // the input carries the pulses plus noise in one bin, noise in the other
    let nodes = (0..2)
        .map(|bin| {
            let data = (0..3 * len)
                .map(|k| {
                    let t = k % len;
                    let signal = if bin == 0 { 2.0 * target[t] - 0.5 } else { 0.0 };
                    signal + rng.gen_range(-0.2..0.2)
                })
                .collect();
            Seq::from_data(3, len, data)
        })
        .collect();
    Sample::new(nodes, target).unwrap()
}

#[test]
fn single_recording_can_be_memorized() {
    let mut net = HprNet::new(ArchConfig::default(), 3).unwrap();
    let data = [pulse_sample(128, 1)];
    let cfg = TrainConfig { epochs: 500, batch_size: 1, learning_rate: 1e-2, crop_len: 128, keep_best: false, ..Default::default() };
    let h = train(&mut net, &data, &[], &cfg).unwrap();
    assert_eq!(h.steps, 500);
    assert!(h.final_train_mse < 1e-3, "final MSE {}", h.final_train_mse);
    assert!(h.final_train_mse <= h.initial_train_mse);
}

#[test]
fn training_is_seed_deterministic() {
    let data: Vec<Sample> = (0..4).map(|s| pulse_sample(200, s)).collect();
    let val = [pulse_sample(96, 9)];
    let cfg = TrainConfig { epochs: 4, batch_size: 2, learning_rate: 3e-3, crop_len: 64, seed: 4, ..Default::default() };
    let run = || {
        let mut net = HprNet::new(ArchConfig::default(), 8).unwrap();
        let h = train(&mut net, &data, &val, &cfg).unwrap();
        (h, net.params)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert_eq!(h1.train_mse.len(), 4);
    assert_eq!(h1.val_mse.len(), 4);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = HprNet::new(ArchConfig::default(), 5).unwrap();
    let path = dir.path().join("net.bin");
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let s = pulse_sample(64, 2);
    let (a, _) = net.forward(&s.nodes).unwrap();
    let (b, _) = back.forward(&s.nodes).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-4);
    }
}
