use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped by class; [`Error::class`] maps each one to the
/// coarse category the CLI turns into an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate batch: batch-norm needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),

    #[error("empty sequence")]
    EmptySequence,

    #[error("label {label} out of range: valid class indices are {lo}..={hi}")]
    LabelRange { label: usize, lo: usize, hi: usize },

    #[error("infeasible alignment: {frames} frames cannot emit {required} required steps")]
    InfeasibleAlignment { frames: usize, required: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint: tensor table does not match config: {0}")]
    ShapeTable(String),

    #[error("pgm: malformed header: {0}")]
    PgmHeader(String),

    #[error("pgm: dimensions {width}x{height} overflow")]
    PgmDimensions { width: usize, height: usize },

    #[error("pgm: truncated payload, expected {expected} bytes, found {found}")]
    PgmTruncated { expected: usize, found: usize },

    #[error("manifest {path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Coarse error categories, one per CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Format,
    Config,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Io => 3,
            ErrorClass::Format => 4,
            ErrorClass::Config => 5,
            ErrorClass::Numeric => 6,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Io { .. } => ErrorClass::Io,
            Error::BadMagic(_)
            | Error::VersionMismatch { .. }
            | Error::Truncated(_)
            | Error::ShapeTable(_)
            | Error::PgmHeader(_)
            | Error::PgmDimensions { .. }
            | Error::PgmTruncated { .. }
            | Error::Manifest { .. } => ErrorClass::Format,
            Error::Config(_) | Error::LabelRange { .. } => ErrorClass::Config,
            Error::Shape(_)
            | Error::DegenerateBatch(_)
            | Error::MissingCache(_)
            | Error::EmptySequence
            | Error::InfeasibleAlignment { .. }
            | Error::NonFiniteGradient(_) => ErrorClass::Numeric,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
