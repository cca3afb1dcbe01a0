//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("graph cycle or forward reference at node {node}")]
    GraphCycle { node: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("K={k} out of range for batch of {b}")]
    KOutOfRange { k: usize, b: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("file format error in {path}: {detail}")]
    FileFormat { path: String, detail: String },

    #[error("insufficient rows in {path}: need {needed}, have {have}")]
    InsufficientRows {
        path: String,
        needed: usize,
        have: usize,
    },

    #[error("sample size mismatch: {a} vs {b}")]
    SampleSizeMismatch { a: usize, b: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("missing checkpoint for domain {0}")]
    MissingCheckpoint(usize),

    #[error("no completed runs found under {0}")]
    NoRunsFound(String),

    #[error("non-finite loss at step {step} (phase {phase})")]
    NonFiniteLoss { step: u64, phase: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by a bad run configuration rather than a
    /// failure at runtime. The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidParam(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
