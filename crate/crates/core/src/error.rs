use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter sets are not aligned at `{name}`: {reason}")]
    Alignment { name: String, reason: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid parameter set: {0}")]
    InvalidParams(String),

    #[error("integrity check failed for {path}: expected digest {expected}, found {actual}")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("malformed archive: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("raw label `{label}` from source `{source_id}` has no mapping entry")]
    Mapping { source_id: String, label: String },

    #[error("duplicate image reference `{0}`")]
    Duplicate(String),

    #[error("unknown region `{0}`")]
    Region(String),

    #[error("failed to ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("class coverage error: {0}")]
    Coverage(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rows are not unit-normalized: {0}")]
    Normalization(String),

    #[error("batch too small: need at least {min} rows, got {got}")]
    BatchSize { min: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("non-finite value: {0}")]
    Validity(String),

    #[error("zero-shot loss must be positive, got {0}")]
    DivisionGuard(f64),

    #[error("reports are not comparable: {0}")]
    Comparability(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Toml(_) | Error::Version { .. } => ErrorKind::Config,
            Error::Alignment { .. }
            | Error::Range(_)
            | Error::InvalidParams(_)
            | Error::Degenerate(_)
            | Error::Normalization(_)
            | Error::BatchSize { .. }
            | Error::Validity(_)
            | Error::DivisionGuard(_) => ErrorKind::Numeric,
            Error::Integrity { .. }
            | Error::Format(_)
            | Error::Data(_)
            | Error::Mapping { .. }
            | Error::Duplicate(_)
            | Error::Region(_)
            | Error::Ingestion { .. }
            | Error::Coverage(_)
            | Error::Label { .. }
            | Error::Comparability(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Image(_) => ErrorKind::Data,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}
