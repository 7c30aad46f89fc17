use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the correction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} is outside [0, 1]")]
    Domain(f64),

    #[error("insufficient sample: need at least {needed} values, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("missing stitch candidate `{0}`")]
    MissingCandidate(&'static str),

    #[error("pixel ({lat}, {lon}) out of range for a {n_lat}x{n_lon} grid")]
    PixelOutOfRange {
        lat: usize,
        lon: usize,
        n_lat: usize,
        n_lon: usize,
    },

    #[error("both samples are constant and equal; t statistic undefined")]
    DegenerateVariance,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dates out of order at line {line}: {msg}")]
    Ordering { line: usize, msg: String },

    #[error("unsupported store version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("schema violation at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no fitted model for pixel ({lat}, {lon}), season {season}, model {model}")]
    MissingModel {
        lat: usize,
        lon: usize,
        season: String,
        model: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver: 1 usage, 2 I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::PixelOutOfRange { .. } => 1,
            Error::Io { .. }
            | Error::MalformedHeader(_)
            | Error::TruncatedPayload { .. }
            | Error::DimensionMismatch(_)
            | Error::Parse { .. }
            | Error::Ordering { .. }
            | Error::VersionMismatch { .. }
            | Error::Schema { .. }
            | Error::MissingModel { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
