use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants group into the three classes the command line maps onto exit
/// codes: data/format problems, numerical failures, and everything else.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate rotation: angle {angle} rad is too close to pi")]
    DegenerateRotation { angle: f64 },

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("invalid pixel ({x}, {y}): {reason}")]
    InvalidPixel { x: usize, y: usize, reason: &'static str },

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid scene: {0}")]
    SpecInvalid(String),

    #[error("trajectory alignment: {0}")]
    Alignment(String),

    #[error("weight fitting failed: {0}")]
    FittingFailure(String),

    #[error("format error in {path}: {message}", path = .path.display())]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("sequence error: {0}")]
    Sequence(String),

    #[error("i/o error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorClass::Usage,
            Error::NumericalFailure(_)
            | Error::DegenerateRotation { .. }
            | Error::FittingFailure(_) => ErrorClass::Numerical,
            Error::BehindCamera { .. }
            | Error::InvalidPixel { .. }
            | Error::DegenerateFrame(_)
            | Error::SpecInvalid(_)
            | Error::Alignment(_)
            | Error::Format { .. }
            | Error::Sequence(_)
            | Error::Io { .. } => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
