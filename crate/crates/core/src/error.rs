use std::path::PathBuf;

use thiserror::Error;

/// Failure modes of the tensor file format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"SCST\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dtype mismatch: file holds {found}, caller asked for {expected}")]
    DtypeMismatch { expected: &'static str, found: &'static str },
    #[error("header truncated after {0} bytes")]
    TruncatedHeader(usize),
    #[error("dimension {index} is zero")]
    ZeroDim { index: usize },
    #[error("element count overflows the address space")]
    DimOverflow,
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("shape overflows 64-bit index arithmetic")]
    ShapeOverflow,
    #[error("not a permutation: {0}")]
    NotPermutation(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("memory queue is empty")]
    EmptyQueue,
    #[error("key {index} is not unit-norm (|k| = {norm})")]
    NotNormalized { index: usize, norm: f64 },
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than internal faults.
    pub fn is_validation(&self) -> bool {
        match self {
            // A missing input file is the caller's mistake, other I/O faults are not.
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::NonFinite(_) => false,
            _ => true,
        }
    }
}
