//! Polyp segmentation networks on a self-contained autodiff core.
//!
//! The crate builds up in layers:
//! - [`tensor`] / [`tape`] / [`ops`]: dense tensors with reverse-mode
//!   autodiff over a recorded computation tape.
//! - [`blocks`]: SE attention, residual-SE, adapter, and CBR building blocks.
//! - [`encoder`] / [`model`]: pyramid-transformer encoder and the four
//!   segmentation network variants.
//! - [`loss`] / [`metrics`]: compound Dice/Jaccard/BCE training loss and the
//!   evaluation metric suite.
//! - [`data`] / [`trainer`] / [`checkpoint`]: Netpbm dataset ingestion,
//!   synthetic data generation, Adam training with early stopping, and
//!   binary checkpoints.
//!
//! See the `examples/` directory for runnable tours of each capability and
//! the `pvtadpnet` binary for the command-line interface.

pub mod blocks;
pub mod check;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod selftest;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use scalar::Elem;
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
