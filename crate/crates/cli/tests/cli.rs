use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cardiodx_cli::dataset::Manifest;
use cardiodx_cli::pipeline::TABLE_HEADER;
use cardiodx_core::analysis::classification_metrics;
use cardiodx_core::io::load_bundle;
use cardiodx_core::ptl::most_common_bin;
use cardiodx_core::radar::magnitude;
use cardiodx_core::synth::SubjectProfile;
use cardiodx_core::Label;
use cardiodx_hprnet::{save_checkpoint, ArchConfig, HprNet};
use tempfile::TempDir;

fn cardiodx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardiodx"))
        .args(args)
        .env_remove("CARDIODX_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cardiodx(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, count: usize, seed: u64, extra: &[&str]) -> Manifest {
    let count = count.to_string();
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--out", p(dir), "--count", &count, "--seed", &seed, "--duration", "12"];
    args.extend_from_slice(extra);
    ok(&args);
    Manifest::load(dir).unwrap()
}

fn first_of(dir: &Path, m: &Manifest, label: Label) -> PathBuf {
    dir.join(&m.entries.iter().find(|e| e.label == label).unwrap().path)
}

#[test]
fn simulate_is_deterministic_and_split() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(&tmp.path().join("a"), 10, 5, &[]);
    let b = simulate(&tmp.path().join("b"), 10, 5, &["--workers", "1"]);
    assert_eq!(a, b);
    assert_eq!(
        fs::read(tmp.path().join("a/manifest.json")).unwrap(),
        fs::read(tmp.path().join("b/manifest.json")).unwrap()
    );
    for e in &a.entries {
        let x = fs::read(tmp.path().join("a").join(&e.path).join("cir.bin")).unwrap();
        let y = fs::read(tmp.path().join("b").join(&e.path).join("cir.bin")).unwrap();
        assert_eq!(x, y, "{}", e.id);
    }
    assert_eq!(a.count(Label::Healthy), 5);
    assert_eq!(a.count(Label::Arrhythmia), 5);
    let c = simulate(&tmp.path().join("c"), 10, 6, &[]);
    assert_ne!(a.entries[0].seed, c.entries[0].seed);
}

#[test]
fn simulate_cycles_profile_files() {
    let tmp = TempDir::new().unwrap();
    let h = tmp.path().join("healthy.json");
    let r = tmp.path().join("arrhythmia.json");
    fs::write(&h, serde_json::to_string(&SubjectProfile::healthy(1)).unwrap()).unwrap();
    fs::write(&r, serde_json::to_string(&SubjectProfile::arrhythmia(2)).unwrap()).unwrap();
    let dir = tmp.path().join("out");
    let m = simulate(&dir, 10, 1, &["--profile", p(&h), "--profile", p(&r)]);
    assert_eq!((m.count(Label::Healthy), m.count(Label::Arrhythmia)), (5, 5));

    // the healthy reflection stays in one bin
    let b = load_bundle(first_of(&dir, &m, Label::Healthy)).unwrap();
    let mag = magnitude(&b.cir);
    let mcb = most_common_bin(&mag).unwrap();
    let hits = (0..mag.cols)
        .filter(|&c| (0..mag.rows).all(|r| mag.get(r, c) <= mag.get(mcb, c)))
        .count();
    assert!(hits as f64 / mag.cols as f64 >= 0.95);
}

#[test]
fn locate_monitor_and_reconstruct() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("data");
    let m = simulate(&dir, 2, 3, &[]);
    let healthy = first_of(&dir, &m, Label::Healthy);
    let b = load_bundle(&healthy).unwrap();

    let csv = ok(&["locate", p(&healthy), "--wt", "100", "--wb", "5"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "chirp,bin");
    assert_eq!(lines.len(), b.cir.num_chirps() + 1);

    let csv = ok(&["monitor", p(&healthy), "--oracle"]);
    assert!(csv.lines().any(|l| l == "medape,hr,0.000000"), "{csv}");
    assert!(csv.lines().any(|l| l == "medape,rr,0.000000"), "{csv}");
    assert_eq!(csv.lines().filter(|l| l.starts_with("hrv,")).count(), 6);

    let ckpt = tmp.path().join("toy.ckpt");
    save_checkpoint(&HprNet::new(ArchConfig::toy(), 1).unwrap(), &ckpt).unwrap();
    let svg = tmp.path().join("hpw.svg");
    let out = tmp.path().join("hpw.csv");
    ok(&["reconstruct", p(&healthy), "--checkpoint", p(&ckpt), "--out", p(&out), "--plot", p(&svg)]);
    let csv = fs::read_to_string(&out).unwrap();
    let rows = csv.lines().count() - 1;
    assert_eq!(rows as f64, b.duration * b.cir.config.processing_rate);
    assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn input_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(cardiodx(&["locate", p(&missing)]).status.code(), Some(2));
    assert_eq!(cardiodx(&["simulate", "--count", "2"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"hpw_sigma\": -1}").unwrap();
    assert_eq!(cardiodx(&["--config", p(&bad), "gradcheck"]).status.code(), Some(2));
    fs::write(&bad, "not json").unwrap();
    assert_eq!(cardiodx(&["--config", p(&bad), "gradcheck"]).status.code(), Some(2));
    let dir = tmp.path().join("data");
    let m = simulate(&dir, 2, 3, &[]);
    let b = first_of(&dir, &m, Label::Healthy);
    assert_eq!(cardiodx(&["reconstruct", p(&b)]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let csv = ok(&["gradcheck", "--per-block", "40"]);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",pass")), "{csv}");
    let csv2 = ok(&["gradcheck", "--per-block", "40"]);
    assert_eq!(csv, csv2);
}

#[test]
fn evaluate_table_has_row_per_mode_and_cohort() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("data");
    simulate(&dir, 10, 9, &[]);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochs": 2, "crop_len": 200, "batch_size": 4}, "forest": {"n_trees": 10}}"#).unwrap();
    let out = tmp.path().join("eval");
    let run = cardiodx(&["--config", p(&cfg), "--seed", "4", "evaluate", p(&dir), "--out", p(&out)]);
    // two epochs cannot meet the comparison thresholds; 4 is the acceptance exit
    assert!(matches!(run.status.code(), Some(0) | Some(4)), "{}", String::from_utf8_lossy(&run.stderr));
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some(TABLE_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let mut keys: Vec<(&str, &str)> = rows.iter().map(|r| (r[0], r[1])).collect();
    keys.dedup();
    assert_eq!(keys.len(), 6);
    for r in &rows {
        let n: Vec<u64> = r[5..9].iter().map(|v| v.parse().unwrap()).collect();
        let m = classification_metrics(n[0], n[1], n[2], n[3]).unwrap();
        let f = |i: usize| r[i].parse::<f64>().unwrap();
        assert!((f(9) - m.accuracy).abs() < 1e-4);
        assert!((f(10) - m.precision).abs() < 1e-4);
        assert!((f(11) - m.recall).abs() < 1e-4);
        assert!((f(12) - m.f1).abs() < 1e-4);
    }
    for mode in ["baseline", "baseline_ptl", "mcardiacdx"] {
        assert!(out.join(format!("{mode}.ckpt")).exists());
    }
    let again = tmp.path().join("eval2");
    cardiodx(&["--config", p(&cfg), "--seed", "4", "evaluate", p(&dir), "--out", p(&again)]);
    assert_eq!(table, fs::read_to_string(again.join("table.csv")).unwrap());
}

#[test]
fn train_writes_loadable_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("data");
    simulate(&dir, 6, 2, &[]);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochs": 1, "crop_len": 200}}"#).unwrap();
    let ckpt = tmp.path().join("net.ckpt");
    ok(&["--config", p(&cfg), "--mode", "baseline", "train", p(&dir), "--out", p(&ckpt)]);
    let net = cardiodx_hprnet::load_checkpoint(&ckpt).unwrap();
    assert_eq!(net.arch, ArchConfig::default());
}
