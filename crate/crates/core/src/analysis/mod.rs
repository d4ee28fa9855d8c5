//! Monitoring (beats, heart rate, HRV), diagnosis (random forest) and the
//! evaluation metrics used to score reconstructions.

pub mod alignment;
pub mod forest;
pub mod hrv;
pub mod metrics;
pub mod monitor;
pub mod peaks;

pub use forest::{ForestConfig, ForestModel};
pub use hrv::{hrv, HrvFeatures};
pub use metrics::{classification_metrics, dtw, medape, roc_auc, zncc, DiagnosisReport};
pub use monitor::{monitoring_errors, monitoring_pairs, rr_and_hr, HrEstimate, MonitorErrors, MonitorPairs};
pub use peaks::detect_peaks;
