use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the correspondence engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("non-finite coordinate ({x}, {y}, {z})")]
    NonFiniteCoord { x: f64, y: f64, z: f64 },

    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("timestep {t} outside schedule range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("invalid feature set: {0}")]
    Features(String),

    #[error("level {0} is not present in the feature set")]
    UnknownLevel(u16),

    #[error(
        "materialized descriptor field needs {required} bytes but the budget is {budget} bytes; \
         use the lazy sampler instead"
    )]
    MemoryBudget { required: u64, budget: u64 },

    #[error("descriptor length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("keypoint sets differ: {0}")]
    Keypoints(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Config(String),
}

/// Structured decoding failures for the on-disk formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"MDF1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated {section}: expected {expected} bytes, found {actual}")]
    Truncated {
        section: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("size mismatch for level {level_id} at header offset {offset}: {detail}")]
    SizeMismatch {
        level_id: u16,
        offset: u64,
        detail: String,
    },

    #[error("trailing data: expected {expected} bytes, file has {actual}")]
    TrailingBytes { expected: u64, actual: u64 },

    #[error("level ids not strictly increasing at header offset {offset}: {previous} then {found}")]
    LevelOrder {
        offset: u64,
        previous: u16,
        found: u16,
    },

    #[error("level {level_id} has a zero extent at header offset {offset}")]
    ZeroExtent { level_id: u16, offset: u64 },

    #[error("no levels")]
    NoLevels,

    #[error("line {line}: {detail}")]
    Line { line: usize, detail: String },

    #[error("sidecar: {0}")]
    Sidecar(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::NonFiniteCoord { .. } => "non_finite_coord",
            Error::Schedule(_) => "schedule",
            Error::TimestepOutOfRange { .. } => "timestep",
            Error::Features(_) => "features",
            Error::UnknownLevel(_) => "unknown_level",
            Error::MemoryBudget { .. } => "memory_budget",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Keypoints(_) => "keypoints",
            Error::Metrics(_) => "metrics",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
        }
    }
}
