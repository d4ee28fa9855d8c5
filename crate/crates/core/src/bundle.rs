use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::radar::CirMatrix;
use crate::synth::SubjectProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Healthy,
    Arrhythmia,
}

impl Label {
    /// Arrhythmia is the positive class.
    pub fn is_positive(self) -> bool {
        self == Label::Arrhythmia
    }
}

/// One simulated recording with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingBundle {
    pub cir: CirMatrix,
    /// Ground-truth heartbeat times, seconds.
    pub r_peaks: Vec<f64>,
    pub label: Label,
    pub subject_profile: SubjectProfile,
    /// Seconds.
    pub duration: f64,
    /// Bin holding the strongest reflector at each frame; empty when unknown.
    pub dominant_bins: Vec<usize>,
}

impl RecordingBundle {
    pub fn validate(&self) -> Result<()> {
        if self.r_peaks.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("r_peaks must be strictly increasing");
        }
        if self.r_peaks.iter().any(|&t| !(0.0..=self.duration).contains(&t)) {
            return invalid("r_peaks must lie within [0, duration]");
        }
        if !self.dominant_bins.is_empty() && self.dominant_bins.len() != self.cir.num_chirps() {
            return invalid("dominant_bins length must match num_chirps");
        }
        Ok(())
    }
}
