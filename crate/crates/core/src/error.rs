use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// CLI exit codes are derived from [`Error::exit_code`]: I/O failures map to 1,
/// everything that is a bad request or bad input maps to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined SNR: {0}")]
    UndefinedSnr(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("missing baseline: {0}")]
    MissingBaseline(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::Image { .. } | Error::MissingBaseline(_) => 1,
            Error::Csv { source, .. } if source.is_io_error() => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
