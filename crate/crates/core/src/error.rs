//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or unsupported WAV file.
    #[error("wav: {0}")]
    Wav(String),

    /// Tensor/spectrogram shape or argument mismatch.
    #[error("shape: {0}")]
    Shape(String),

    /// Bad configuration file or parameter.
    #[error("config: {0}")]
    Config(String),

    /// Malformed input data (manifests, checkpoints, signals).
    #[error("data: {0}")]
    Data(String),

    /// Numeric failure: NaN/Inf where finite values are required, divergence.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code for CLI use: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 1,
            Error::Io(_) | Error::Wav(_) | Error::Data(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
