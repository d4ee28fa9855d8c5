use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cardiodx_cli::config::{Mode, PipelineConfig};
use cardiodx_cli::dataset::{self, load_entry, write_atomic, Manifest, Split};
use cardiodx_cli::error::{CliError, CliResult};
use cardiodx_cli::pipeline::{self, EvalData, ModeReport};
use cardiodx_cli::plot::{line_plot, Series};
use cardiodx_core::analysis::rr_and_hr;
use cardiodx_core::io::load_bundle;
use cardiodx_core::synth::SubjectProfile;
use cardiodx_core::{Hpw, RecordingBundle};
use cardiodx_hprnet::{grad_check, load_checkpoint, save_checkpoint, ArchConfig, HprNet, Seq};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "cardiodx", version, about = "Radar heart pulse reconstruction and arrhythmia screening")]
struct Cli {
    /// Pipeline configuration (JSON); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true, env = "CARDIODX_SEED")]
    seed: Option<u64>,
    /// Tracking window, chirps.
    #[arg(long, global = true)]
    wt: Option<usize>,
    /// Tracking neighbourhood, bins.
    #[arg(long, global = true)]
    wb: Option<usize>,
    /// Output file or directory; stdout when omitted for single-file outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort into --out with a manifest.
    Simulate {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Subject profile JSON; repeat to cycle through several.
        #[arg(long)]
        profile: Vec<PathBuf>,
        /// Recording length, seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Per-chirp bin selection as CSV.
    Locate { bundle: PathBuf },
    /// Heart pulse waveform as CSV.
    Reconstruct {
        bundle: PathBuf,
        /// Also write an SVG plot.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// HR, RR and HRV of one recording, with errors against its ground truth.
    Monitor {
        bundle: PathBuf,
        /// Use the ground-truth waveform instead of the network.
        #[arg(long)]
        oracle: bool,
    },
    /// Fit the forest on the training split and score the test split.
    Diagnose { data: PathBuf },
    /// Train, reconstruct, monitor and diagnose in every mode.
    Evaluate {
        data: PathBuf,
        /// Separate cohort for diagnosis; the test split otherwise.
        #[arg(long)]
        diagnosis: Option<PathBuf>,
        /// Modes to run (default all).
        #[arg(long, value_enum, num_args = 1..)]
        modes: Vec<Mode>,
    },
    /// Train the network for --mode and write a checkpoint.
    Train { data: PathBuf },
    /// Finite-difference check of the toy network's gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 200)]
        per_block: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json(
            &fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        )?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.wt {
        cfg.ptl.w_t = w;
    }
    if let Some(w) = cli.wb {
        cfg.ptl.w_b = w;
    }
    if let Some(c) = &cli.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Input("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let cfg = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate { count, profile, duration } => simulate(&cfg, out, *count, profile, *duration),
        Command::Locate { bundle } => locate(&cfg, out, bundle),
        Command::Reconstruct { bundle, plot } => reconstruct(&cfg, out, bundle, plot.as_deref()),
        Command::Monitor { bundle, oracle } => monitor(&cfg, out, bundle, *oracle),
        Command::Diagnose { data } => diagnose(&cfg, out, data),
        Command::Evaluate { data, diagnosis, modes } => evaluate(&cfg, out, data, diagnosis.as_deref(), modes),
        Command::Train { data } => train(&cfg, out, data),
        Command::Gradcheck { epsilon, per_block } => gradcheck(&cfg, out, *epsilon, *per_block),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_bundle(path: &Path) -> CliResult<RecordingBundle> {
    load_bundle(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn network(cfg: &PipelineConfig) -> CliResult<HprNet> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Input("--checkpoint is required".into()))?;
    load_checkpoint(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn hpw_csv(hpw: &Hpw) -> String {
    let mut s = String::from("time,hpw\n");
    for (i, v) in hpw.samples.iter().enumerate() {
        s.push_str(&format!("{:.4},{v:.6}\n", i as f64 / hpw.rate));
    }
    s
}

fn simulate(cfg: &PipelineConfig, out: Option<&Path>, count: usize, profiles: &[PathBuf], duration: Option<f64>) -> CliResult<()> {
    let dir = out.ok_or_else(|| CliError::Input("simulate needs --out <dir>".into()))?;
    if count == 0 {
        return Err(CliError::Input("--count must be at least 1".into()));
    }
    let duration = duration.unwrap_or(cfg.duration);
    let subjects = if profiles.is_empty() {
        dataset::default_cohort(count.div_ceil(2), count / 2, cfg.seed)
    } else {
        let templates = profiles
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                let profile: SubjectProfile = serde_json::from_str(&text)?;
                profile.validate()?;
                Ok(profile)
            })
            .collect::<CliResult<Vec<_>>>()?;
        dataset::cohort(&templates, count, cfg.seed)
    };
    let manifest = dataset::write_cohort(dir, &subjects, &cfg.radar, duration, cfg.seed)?;
    eprintln!(
        "wrote {} recordings ({} healthy, {} arrhythmia) to {}",
        manifest.entries.len(),
        manifest.count(cardiodx_core::Label::Healthy),
        manifest.count(cardiodx_core::Label::Arrhythmia),
        dir.display()
    );
    Ok(())
}

fn locate(cfg: &PipelineConfig, out: Option<&Path>, bundle: &Path) -> CliResult<()> {
    let b = read_bundle(bundle)?;
    let sel = pipeline::selection(&b.cir, cfg.mode, &cfg.ptl)?;
    let mut s = String::from("chirp,bin\n");
    for (i, bin) in sel.bins.iter().enumerate() {
        s.push_str(&format!("{i},{bin}\n"));
    }
    emit(out, &s)
}

fn reconstruct(cfg: &PipelineConfig, out: Option<&Path>, bundle: &Path, plot: Option<&Path>) -> CliResult<()> {
    let b = read_bundle(bundle)?;
    let net = network(cfg)?;
    let hpw = pipeline::reconstruct(&net, &b.cir, cfg, cfg.mode)?;
    emit(out, &hpw_csv(&hpw))?;
    if let Some(p) = plot {
        let truth = pipeline::target(&b, cfg.hpw_sigma)?;
        let svg = line_plot(
            &format!("{} ({})", bundle.display(), cfg.mode),
            &[
                Series { name: "reconstructed", values: &hpw.samples, rate: hpw.rate },
                Series { name: "target", values: &truth.samples, rate: truth.rate },
            ],
            &pipeline::beats(&hpw, &cfg.peaks),
        );
        write_atomic(p, svg.as_bytes())?;
    }
    Ok(())
}

fn monitor(cfg: &PipelineConfig, out: Option<&Path>, bundle: &Path, oracle: bool) -> CliResult<()> {
    let b = read_bundle(bundle)?;
    let hpw = if oracle {
        pipeline::target(&b, cfg.hpw_sigma)?
    } else {
        pipeline::reconstruct(&network(cfg)?, &b.cir, cfg, cfg.mode)?
    };
    let score = pipeline::score_recording("", &b, &hpw, cfg, cfg.mode, false)?;
    let est = rr_and_hr(&score.beats)?;
    let mut s = String::from("kind,key,value\n");
    for w in &est.hr {
        s.push_str(&format!("hr,{:.1},{:.4}\n", w.start, w.bpm));
    }
    for (i, rr) in est.rr_ms.iter().enumerate() {
        s.push_str(&format!("rr,{i},{rr:.3}\n"));
    }
    if let Some(h) = &score.hrv {
        let names = ["mean_nn", "median_nn", "sdnn", "iqr_nn", "mad_nn", "mad_over_median"];
        for (name, v) in names.iter().zip(h.to_vec()) {
            s.push_str(&format!("hrv,{name},{v:.6}\n"));
        }
    }
    let errors = score.pairs.errors()?;
    s.push_str(&format!("medape,hr,{:.6}\nmedape,rr,{:.6}\n", errors.hr_medape, errors.rr_medape));
    emit(out, &s)?;
    eprintln!("{}", serde_json::to_string(&errors)?);
    Ok(())
}

fn load_split(dir: &Path, manifest: &Manifest, split: Option<Split>) -> CliResult<Vec<RecordingBundle>> {
    manifest
        .entries
        .par_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| load_entry(dir, e))
        .collect()
}

fn diagnose(cfg: &PipelineConfig, out: Option<&Path>, data: &Path) -> CliResult<()> {
    let manifest = Manifest::load(data)?;
    let train = load_split(data, &manifest, Some(Split::Train))?;
    let test = load_split(data, &manifest, Some(Split::Test))?;
    let net = network(cfg)?;
    let train_refs: Vec<&RecordingBundle> = train.iter().collect();
    let test_refs: Vec<&RecordingBundle> = test.iter().collect();
    let hpws = pipeline::reconstruct_all(&net, &train_refs, cfg, cfg.mode)?;
    let (rows, labels) = pipeline::diagnosis_training_rows(&train_refs, &hpws, cfg);
    let forest = cardiodx_core::analysis::ForestConfig {
        seed: cardiodx_core::seed::derive(cfg.seed, &format!("forest/{}", cfg.mode)),
        ..cfg.forest.clone()
    };
    let model = cardiodx_core::analysis::forest::rf_train(&rows, &labels, &forest)?;
    let test_hpw = pipeline::reconstruct_all(&net, &test_refs, cfg, cfg.mode)?;
    let hrvs: Vec<_> = test_hpw.iter().map(|h| pipeline::beat_hrv(&pipeline::beats(h, &cfg.peaks))).collect();
    let test_labels: Vec<_> = test.iter().map(|b| b.label).collect();
    let (report, _) = pipeline::diagnose(&model, &hrvs, &test_labels)?;
    emit(out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn evaluate(cfg: &PipelineConfig, out: Option<&Path>, data: &Path, diagnosis: Option<&Path>, modes: &[Mode]) -> CliResult<()> {
    let manifest = Manifest::load(data)?;
    let train = load_split(data, &manifest, Some(Split::Train))?;
    let val = load_split(data, &manifest, Some(Split::Val))?;
    let test = load_split(data, &manifest, Some(Split::Test))?;
    let diag = match diagnosis {
        Some(d) => load_split(d, &Manifest::load(d)?, None)?,
        None => Vec::new(),
    };
    let eval = EvalData {
        train: train.iter().collect(),
        val: val.iter().collect(),
        test: test.iter().collect(),
        diagnosis: if diag.is_empty() { test.iter().collect() } else { diag.iter().collect() },
    };
    let modes = if modes.is_empty() { Mode::ALL.to_vec() } else { modes.to_vec() };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut reports: Vec<ModeReport> = Vec::new();
    for &mode in &modes {
        let (net, report) = pipeline::evaluate_mode(&eval, cfg, mode)?;
        eprintln!("{mode}: trained in {:.1} s, median arrhythmia DTW {:.5}", report.train_seconds, report.median_dtw_arrhythmia);
        if let Some(dir) = out {
            save_checkpoint(&net, dir.join(format!("{mode}.ckpt")))?;
        }
        reports.push(report);
    }
    let table = pipeline::table_csv(&pipeline::comparison_table(&reports));
    match out {
        Some(dir) => {
            write_atomic(&dir.join("table.csv"), table.as_bytes())?;
            write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&reports)?.as_bytes())?;
        }
        None => print!("{table}"),
    }
    let failed: Vec<String> = pipeline::acceptance_checks(&reports)
        .into_iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(failed.join(", ")))
    }
}

fn train(cfg: &PipelineConfig, out: Option<&Path>, data: &Path) -> CliResult<()> {
    let dest = out
        .or(cfg.checkpoint.as_deref())
        .ok_or_else(|| CliError::Input("train needs --out or --checkpoint".into()))?;
    let manifest = Manifest::load(data)?;
    let train = load_split(data, &manifest, Some(Split::Train))?;
    let val = load_split(data, &manifest, Some(Split::Val))?;
    let (net, history) = pipeline::train_mode(&train.iter().collect::<Vec<_>>(), &val.iter().collect::<Vec<_>>(), cfg, cfg.mode)?;
    save_checkpoint(&net, dest)?;
    eprintln!(
        "{}: {} epochs, best epoch {:?}, train MSE {:.5} -> {:.5}",
        cfg.mode,
        history.train_mse.len(),
        history.best_epoch,
        history.initial_train_mse,
        history.final_train_mse
    );
    Ok(())
}

/// Relative error bound for a passing gradient check.
const GRADCHECK_TOLERANCE: f64 = 1e-3;

fn gradcheck(cfg: &PipelineConfig, out: Option<&Path>, epsilon: f64, per_block: usize) -> CliResult<()> {
    let seed = cardiodx_core::seed::derive(cfg.seed, "gradcheck");
    let net = HprNet::new(ArchConfig::toy(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cardiodx_core::seed::derive(seed, "input"));
    let len = 32;
    let nodes: Vec<Seq> = (0..3)
        .map(|_| Seq::from_data(3, len, (0..3 * len).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let target: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
    let report = grad_check(&net, &nodes, &target, epsilon, per_block, seed, None)?;
    let mut s = String::from("block,checked,skipped,max_rel_error,result\n");
    for b in &report.blocks {
        let verdict = if b.max_rel_error < GRADCHECK_TOLERANCE { "pass" } else { "fail" };
        s.push_str(&format!("{},{},{},{:.3e},{verdict}\n", b.block, b.checked, b.skipped, b.max_rel_error));
    }
    emit(out, &s)?;
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed: max relative error {:.3e}", report.max_rel_error)))
    }
}
