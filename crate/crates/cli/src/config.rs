use std::path::PathBuf;

use cardiodx_core::analysis::peaks::{DEFAULT_MIN_HEIGHT, DEFAULT_REFRACTORY};
use cardiodx_core::analysis::ForestConfig;
use cardiodx_core::ptl::PtlParams;
use cardiodx_core::sigproc::Normalization;
use cardiodx_core::synth::HPW_SIGMA;
use cardiodx_core::RadarConfig;
use cardiodx_hprnet::{ArchConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Which of the three compared systems runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    /// Most common bin only, one input row.
    Baseline,
    /// Tracked bin, stitched into one input row.
    BaselinePtl,
    /// Tracked neighbourhood, every bin as an input row.
    Mcardiacdx,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::BaselinePtl, Mode::Mcardiacdx];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::BaselinePtl => "baseline_ptl",
            Mode::Mcardiacdx => "mcardiacdx",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakParams {
    pub min_height: f64,
    /// seconds
    pub refractory: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self { min_height: DEFAULT_MIN_HEIGHT, refractory: DEFAULT_REFRACTORY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisParams {
    /// Add ECG-derived HRV rows next to waveform-derived rows when fitting
    /// the forest. Held-out recordings are always scored from waveforms.
    pub ecg_training_rows: bool,
}

impl Default for DiagnosisParams {
    fn default() -> Self {
        Self { ecg_training_rows: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub ptl: PtlParams,
    pub normalization: Normalization,
    /// Gaussian width of target waveforms, seconds.
    pub hpw_sigma: f64,
    pub peaks: PeakParams,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub diagnosis: DiagnosisParams,
    pub radar: RadarConfig,
    /// Recording length for `simulate`, seconds.
    pub duration: f64,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mcardiacdx,
            ptl: PtlParams::default(),
            normalization: Normalization::default(),
            hpw_sigma: HPW_SIGMA,
            peaks: PeakParams::default(),
            arch: ArchConfig::default(),
            train: TrainConfig { epochs: 200, batch_size: 8, learning_rate: 3e-3, crop_len: 400, ..TrainConfig::default() },
            forest: ForestConfig::default(),
            diagnosis: DiagnosisParams::default(),
            radar: RadarConfig::default(),
            duration: 60.0,
            checkpoint: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.ptl.validate()?;
        self.radar.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if !(self.hpw_sigma > 0.0) || !(self.duration > 0.0) {
            return Err(CliError::Input("hpw_sigma and duration must be positive".into()));
        }
        if !(self.peaks.refractory > 0.0) {
            return Err(CliError::Input("refractory period must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
