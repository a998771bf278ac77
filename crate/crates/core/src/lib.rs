//! Repetitive-signal counting from a single annotated first cycle.
//!
//! The pipeline resamples each sequence so its first cycle spans a fixed
//! number of frames, encodes it with a small temporal network, correlates
//! multi-scale copies of the first-cycle feature against the whole sequence,
//! and regresses a per-frame density map whose sum is the predicted count.
//! A retrieval stage (nearest first-cycle embeddings from the training set)
//! augments the correlation kernels during fine-tuning and inference.

pub mod array;
pub mod baselines;
pub mod config;
pub mod densitymap;
pub mod encoder;
pub mod head;
pub mod kernels;
pub mod metrics;
pub mod mtgc;
pub mod param;
pub mod sampling;
pub mod seqdata;
pub mod tape;
pub mod tka;
pub mod train;

pub use array::Array;
pub use param::{ParamStore, Parameter};
pub use tape::{NodeId, Tape};

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset record {index}: {msg}")]
    Record { index: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
