use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("compression ratio {ratio} does not divide source length {source_len} into an integer")]
    NonIntegerDimension { ratio: String, source_len: usize },
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("truncated record in {path}: {len} bytes is not a multiple of {record}")]
    TruncatedRecord { path: PathBuf, len: usize, record: usize },
    #[error("unknown label {label} (record {index})")]
    UnknownLabel { label: u32, index: usize },
    #[error("bad raw container: {0}")]
    BadContainer(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch mismatch: {0:?} vs {1:?}")]
    BatchMismatch(Vec<usize>, Vec<usize>),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("pilot at subcarrier {subcarrier}, symbol {symbol} is zero")]
    ZeroPilot { subcarrier: usize, symbol: usize },
    #[error("length error: {0}")]
    LengthError(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("non-finite loss at step {step}")]
    NaNLoss { step: usize },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("dataset not found: {0}")]
    DatasetMissing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autograd(#[from] slscom_autograd::AutogradError),
}

impl Error {
    /// Variant name, used as the process-level error class.
    pub fn class_name(&self) -> &'static str {
        match self {
            Error::NonIntegerDimension { .. } => "NonIntegerDimension",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ConfigParse { .. } => "ConfigParse",
            Error::UnknownKey(_) => "UnknownKey",
            Error::BadValue { .. } => "BadValue",
            Error::TruncatedRecord { .. } => "TruncatedRecord",
            Error::UnknownLabel { .. } => "UnknownLabel",
            Error::BadContainer(_) => "BadContainer",
            Error::InfeasibleSplit(_) => "InfeasibleSplit",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::BatchMismatch(..) => "BatchMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::ZeroPilot { .. } => "ZeroPilot",
            Error::LengthError(_) => "LengthError",
            Error::MissingCheckpoint(_) => "MissingCheckpoint",
            Error::NaNLoss { .. } => "NaNLoss",
            Error::Checkpoint(_) => "Checkpoint",
            Error::DatasetMissing(_) => "DatasetMissing",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Autograd(_) => "Autograd",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
