//! Contactless cardiac sensing from FMCW radar channel impulse responses.
//!
//! The crate covers the signal side of the pipeline: CIR types and file
//! formats, a recording simulator with ground truth, range-bin tracking,
//! feature extraction, and the monitoring / diagnosis analysis stage.
//! The reconstruction network lives in `cardiodx-hprnet`.

pub mod analysis;
pub mod bundle;
pub mod error;
pub mod io;
pub mod ptl;
pub mod radar;
pub mod seed;
pub mod sigproc;
pub mod synth;

pub use error::{Error, Result};
pub use bundle::{Label, RecordingBundle};
pub use radar::{BinSelection, CirMatrix, Hpw, RadarConfig};
