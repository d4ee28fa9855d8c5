//! Pipeline orchestration behind the `cardiodx` binary.

pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{Mode, PipelineConfig};
pub use error::{CliError, CliResult};
