//! Per-mode feature selection, training, reconstruction and scoring.

use std::time::Instant;

use cardiodx_core::analysis::forest::{rf_predict, rf_train};
use cardiodx_core::analysis::{
    self, classification_metrics, detect_peaks, hrv, monitoring_pairs, roc_auc, DiagnosisReport, ForestConfig,
    ForestModel, HrvFeatures, MonitorErrors, MonitorPairs,
};
use cardiodx_core::ptl::{most_common_bin, ptl, PtlParams};
use cardiodx_core::radar::magnitude;
use cardiodx_core::sigproc::{build_features_with, neighbourhood_bounds, raw_features, FeatureBlock, Normalization};
use cardiodx_core::synth::gen_hpw_target;
use cardiodx_core::{BinSelection, CirMatrix, Hpw, Label, RecordingBundle};
use cardiodx_hprnet::{train, HprNet, History, Sample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, PeakParams, PipelineConfig};
use crate::error::{CliError, CliResult};

/// Bin selection a mode works from: the constant most common bin for the
/// baseline, the tracker's output otherwise.
pub fn selection(cir: &CirMatrix, mode: Mode, params: &PtlParams) -> CliResult<BinSelection> {
    Ok(match mode {
        Mode::Baseline => BinSelection::constant(most_common_bin(&magnitude(cir))?, cir.num_chirps()),
        Mode::BaselinePtl | Mode::Mcardiacdx => ptl(cir, params)?,
    })
}

/// Network input of one recording under `mode`.
pub fn mode_features(cir: &CirMatrix, mode: Mode, params: &PtlParams, norm: Normalization) -> CliResult<FeatureBlock> {
    let block = match mode {
        Mode::Baseline => {
            let t = most_common_bin(&magnitude(cir))?;
            let mut b = raw_features(cir, t, t)?;
            b.normalize(norm);
            b
        }
        Mode::BaselinePtl => {
            let sel = ptl(cir, params)?;
            let (first, last) = neighbourhood_bounds(cir, params)?;
            let raw = raw_features(cir, first, last)?;
            let rows: Vec<usize> = sel.bins.iter().map(|b| b - first).collect();
            let mut b = raw.stitch(&rows)?;
            b.normalize(norm);
            b
        }
        Mode::Mcardiacdx => {
            let sel = ptl(cir, params)?;
            build_features_with(cir, &sel, params, norm)?.0
        }
    };
    Ok(block)
}

/// Gaussian pulse-train target of a bundle at its processing rate.
pub fn target(bundle: &RecordingBundle, sigma: f64) -> CliResult<Hpw> {
    let cir = &bundle.cir;
    Ok(gen_hpw_target(&bundle.r_peaks, cir.config.processing_rate, sigma, cir.num_chirps())?)
}

pub fn sample(bundle: &RecordingBundle, cfg: &PipelineConfig, mode: Mode) -> CliResult<Sample> {
    let block = mode_features(&bundle.cir, mode, &cfg.ptl, cfg.normalization)?;
    Ok(Sample::from_block(&block, &target(bundle, cfg.hpw_sigma)?)?)
}

pub fn samples(bundles: &[&RecordingBundle], cfg: &PipelineConfig, mode: Mode) -> CliResult<Vec<Sample>> {
    bundles.par_iter().map(|b| sample(b, cfg, mode)).collect()
}

/// Train one network for `mode`. The network seed and the training seed
/// both derive from the pipeline seed and the mode name.
pub fn train_mode(
    train_set: &[&RecordingBundle],
    val_set: &[&RecordingBundle],
    cfg: &PipelineConfig,
    mode: Mode,
) -> CliResult<(HprNet, History)> {
    let stage = cardiodx_core::seed::derive(cfg.seed, &format!("train/{mode}"));
    let mut net = HprNet::new(cfg.arch.clone(), cardiodx_core::seed::derive(stage, "init"))?;
    let tr = samples(train_set, cfg, mode)?;
    let va = samples(val_set, cfg, mode)?;
    let tc = cardiodx_hprnet::TrainConfig { seed: cardiodx_core::seed::derive(stage, "batches"), ..cfg.train.clone() };
    let history = train(&mut net, &tr, &va, &tc)?;
    Ok((net, history))
}

pub fn reconstruct(net: &HprNet, cir: &CirMatrix, cfg: &PipelineConfig, mode: Mode) -> CliResult<Hpw> {
    let block = mode_features(cir, mode, &cfg.ptl, cfg.normalization)?;
    if block.num_bins() != 1 && mode != Mode::Mcardiacdx {
        return Err(CliError::Input("single-bin mode produced several rows".into()));
    }
    Ok(net.reconstruct(&block)?)
}

pub fn beats(hpw: &Hpw, peaks: &PeakParams) -> Vec<f64> {
    detect_peaks(hpw, peaks.min_height, peaks.refractory)
}

/// Scores of one reconstructed recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingScore {
    pub id: String,
    pub label: Label,
    pub mode: Mode,
    pub dtw: f64,
    pub beats: Vec<f64>,
    pub hrv: Option<HrvFeatures>,
    pub pairs: MonitorPairs,
}

/// HRV of a beat train, if it has enough beats.
pub fn beat_hrv(beats: &[f64]) -> Option<HrvFeatures> {
    let rr: Vec<f64> = beats.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
    hrv(&rr).ok()
}

pub fn score_recording(id: &str, bundle: &RecordingBundle, hpw: &Hpw, cfg: &PipelineConfig, mode: Mode, with_dtw: bool) -> CliResult<RecordingScore> {
    let truth = target(bundle, cfg.hpw_sigma)?;
    let dtw = if with_dtw { analysis::dtw(&hpw.samples, &truth.samples)? } else { f64::NAN };
    let found = beats(hpw, &cfg.peaks);
    let pairs = monitoring_pairs(&found, &bundle.r_peaks, bundle.duration)?;
    Ok(RecordingScore {
        id: id.to_string(),
        label: bundle.label,
        mode,
        dtw,
        hrv: beat_hrv(&found),
        beats: found,
        pairs,
    })
}

pub fn median(values: &[f64]) -> f64 {
    analysis::hrv::median(values)
}

/// HRV rows used to fit the diagnosis forest.
pub fn diagnosis_training_rows(
    bundles: &[&RecordingBundle],
    hpws: &[Hpw],
    cfg: &PipelineConfig,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (b, hpw) in bundles.iter().zip(hpws) {
        if cfg.diagnosis.ecg_training_rows {
            if let Some(h) = beat_hrv(&b.r_peaks) {
                rows.push(h.to_vec());
                labels.push(b.label.is_positive());
            }
        }
        if let Some(h) = beat_hrv(&beats(hpw, &cfg.peaks)) {
            rows.push(h.to_vec());
            labels.push(b.label.is_positive());
        }
    }
    (rows, labels)
}

/// Forest verdicts on held-out recordings. A recording whose waveform yields
/// too few beats for HRV is scored 1.0: an unreadable rhythm is flagged.
pub fn diagnose(model: &ForestModel, hrvs: &[Option<HrvFeatures>], labels: &[Label]) -> CliResult<(DiagnosisReport, Vec<f64>)> {
    let scores: Vec<f64> = hrvs
        .iter()
        .map(|h| h.map_or(1.0, |h| rf_predict(model, &h.to_vec()).1))
        .collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, l) in scores.iter().zip(labels) {
        match (s >= 0.5, l.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut report = classification_metrics(tp, fp, tn, fn_)?;
    let positive: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    report.roc_auc = roc_auc(&scores, &positive).ok();
    Ok((report, scores))
}

pub fn reconstruct_all(net: &HprNet, bundles: &[&RecordingBundle], cfg: &PipelineConfig, mode: Mode) -> CliResult<Vec<Hpw>> {
    bundles.par_iter().map(|b| reconstruct(net, &b.cir, cfg, mode)).collect()
}

/// A simulated cohort split for training and testing, plus an independent
/// cohort for diagnosis.
pub struct EvalData<'a> {
    pub train: Vec<&'a RecordingBundle>,
    pub val: Vec<&'a RecordingBundle>,
    pub test: Vec<&'a RecordingBundle>,
    pub diagnosis: Vec<&'a RecordingBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub train_seconds: f64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_mse: f64,
    pub median_dtw_healthy: f64,
    pub median_dtw_arrhythmia: f64,
    pub monitor_healthy: Option<MonitorErrors>,
    pub monitor_arrhythmia: Option<MonitorErrors>,
    pub diagnosis: DiagnosisReport,
    pub diagnosis_labels: Vec<Label>,
    pub diagnosis_scores: Vec<f64>,
}

/// Train, reconstruct, monitor and diagnose for one mode.
pub fn evaluate_mode(data: &EvalData, cfg: &PipelineConfig, mode: Mode) -> CliResult<(HprNet, ModeReport)> {
    let start = Instant::now();
    let (net, history) = train_mode(&data.train, &data.val, cfg, mode)?;
    let train_seconds = start.elapsed().as_secs_f64();

    let test_hpw = reconstruct_all(&net, &data.test, cfg, mode)?;
    let scores: Vec<RecordingScore> = data
        .test
        .par_iter()
        .zip(&test_hpw)
        .enumerate()
        .map(|(i, (b, h))| score_recording(&format!("test{i}"), b, h, cfg, mode, true))
        .collect::<CliResult<_>>()?;
    let by_label = |label: Label| scores.iter().filter(move |s| s.label == label);
    let med = |label: Label| median(&by_label(label).map(|s| s.dtw).collect::<Vec<_>>());
    let pooled = |label: Label| {
        let mut p = MonitorPairs::default();
        by_label(label).for_each(|s| p.extend(&s.pairs));
        p.errors().ok()
    };

    let train_hpw = reconstruct_all(&net, &data.train, cfg, mode)?;
    let (rows, labels) = diagnosis_training_rows(&data.train, &train_hpw, cfg);
    let forest_cfg = ForestConfig { seed: cardiodx_core::seed::derive(cfg.seed, &format!("forest/{mode}")), ..cfg.forest.clone() };
    let model = rf_train(&rows, &labels, &forest_cfg)?;
    let diag_hpw = reconstruct_all(&net, &data.diagnosis, cfg, mode)?;
    let diag_hrv: Vec<Option<HrvFeatures>> = diag_hpw.iter().map(|h| beat_hrv(&beats(h, &cfg.peaks))).collect();
    let diag_labels: Vec<Label> = data.diagnosis.iter().map(|b| b.label).collect();
    let (diagnosis, diagnosis_scores) = diagnose(&model, &diag_hrv, &diag_labels)?;

    let best_val_mse = history
        .best_epoch
        .and_then(|e| history.val_mse.get(e).copied())
        .unwrap_or(f64::NAN);
    let report = ModeReport {
        mode,
        train_seconds,
        epochs: history.train_mse.len(),
        best_epoch: history.best_epoch,
        best_val_mse,
        median_dtw_healthy: med(Label::Healthy),
        median_dtw_arrhythmia: med(Label::Arrhythmia),
        monitor_healthy: pooled(Label::Healthy),
        monitor_arrhythmia: pooled(Label::Arrhythmia),
        diagnosis,
        diagnosis_labels: diag_labels,
        diagnosis_scores,
    };
    Ok((net, report))
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub mode: Mode,
    pub cohort: Label,
    pub median_dtw: f64,
    pub hr_medape: f64,
    pub rr_medape: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
}

pub const TABLE_HEADER: &str = "mode,cohort,median_dtw,hr_medape,rr_medape,tp,fp,tn,fn,accuracy,precision,recall,f1,roc_auc";

/// Rows per (mode, cohort). Diagnosis columns repeat the mode's pooled
/// confusion counts so every row can be checked against them.
pub fn comparison_table(reports: &[ModeReport]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for r in reports {
        for cohort in [Label::Healthy, Label::Arrhythmia] {
            let (dtw, mon) = match cohort {
                Label::Healthy => (r.median_dtw_healthy, r.monitor_healthy),
                Label::Arrhythmia => (r.median_dtw_arrhythmia, r.monitor_arrhythmia),
            };
            let d = &r.diagnosis;
            rows.push(TableRow {
                mode: r.mode,
                cohort,
                median_dtw: dtw,
                hr_medape: mon.map_or(f64::NAN, |m| m.hr_medape),
                rr_medape: mon.map_or(f64::NAN, |m| m.rr_medape),
                tp: d.tp,
                fp: d.fp,
                tn: d.tn,
                fn_: d.fn_,
                accuracy: d.accuracy,
                precision: d.precision,
                recall: d.recall,
                f1: d.f1,
                roc_auc: d.roc_auc.unwrap_or(f64::NAN),
            });
        }
    }
    rows
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let label = match r.cohort {
            Label::Healthy => "healthy",
            Label::Arrhythmia => "arrhythmia",
        };
        out.push_str(&format!(
            "{},{label},{:.6},{:.4},{:.4},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.mode, r.median_dtw, r.hr_medape, r.rr_medape, r.tp, r.fp, r.tn, r.fn_, r.accuracy, r.precision, r.recall, r.f1, r.roc_auc
        ));
    }
    out
}

/// Thresholds `evaluate` holds the three-way comparison to.
pub const DTW_IMPROVEMENT: f64 = 0.2;
pub const MEDAPE_HEALTHY: f64 = 5.0;
pub const MEDAPE_ARRHYTHMIA: f64 = 8.0;
pub const MIN_ACCURACY: f64 = 0.9;
pub const MIN_AUC: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

/// Comparison checks over whichever modes were evaluated.
pub fn acceptance_checks(reports: &[ModeReport]) -> Vec<Check> {
    let get = |m: Mode| reports.iter().find(|r| r.mode == m);
    let mut out = Vec::new();
    if let (Some(b), Some(p), Some(f)) = (get(Mode::Baseline), get(Mode::BaselinePtl), get(Mode::Mcardiacdx)) {
        let (db, dp, df) = (b.median_dtw_arrhythmia, p.median_dtw_arrhythmia, f.median_dtw_arrhythmia);
        out.push(check(
            "dtw_improvement",
            df <= (1.0 - DTW_IMPROVEMENT) * db,
            format!("mcardiacdx {df:.5} vs baseline {db:.5}"),
        ));
        out.push(check("dtw_ordering", df <= dp && dp <= db, format!("{df:.5} <= {dp:.5} <= {db:.5}")));
        let (rb, rp, rf) = (b.diagnosis.recall, p.diagnosis.recall, f.diagnosis.recall);
        out.push(check("recall_ordering", rf >= rp && rp >= rb, format!("{rf:.3} >= {rp:.3} >= {rb:.3}")));
    }
    if let Some(f) = get(Mode::Mcardiacdx) {
        let under = |m: Option<MonitorErrors>, limit: f64| m.is_some_and(|m| m.hr_medape < limit && m.rr_medape < limit);
        out.push(check(
            "monitor_healthy",
            under(f.monitor_healthy, MEDAPE_HEALTHY),
            format!("{:?}", f.monitor_healthy),
        ));
        out.push(check(
            "monitor_arrhythmia",
            under(f.monitor_arrhythmia, MEDAPE_ARRHYTHMIA),
            format!("{:?}", f.monitor_arrhythmia),
        ));
        let auc = f.diagnosis.roc_auc.unwrap_or(0.0);
        out.push(check(
            "diagnosis",
            f.diagnosis.accuracy >= MIN_ACCURACY && auc >= MIN_AUC,
            format!("accuracy {:.3}, auc {auc:.3}", f.diagnosis.accuracy),
        ));
    }
    out
}
