//! Heart pulse reconstruction network: per-bin convolutions, graph attention
//! across range bins, a convolutional encoder-decoder with skips, a
//! bidirectional LSTM and a sigmoid head. Forward and backward passes are
//! written out by hand in f64.

pub mod checkpoint;
pub mod error;
pub mod gat;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{Error, Result};
pub use gat::{gat_forward, Fault, GatParams};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{block_nodes, ArchConfig, HprNet};
pub use tensor::Seq;
pub use train::{train, History, Sample, TrainConfig};
