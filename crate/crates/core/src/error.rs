use thiserror::Error;

/// Errors raised by the codec library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("backward pass for {0} has no cached forward activations")]
    MissingCache(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("bitstream: {0}")]
    Bitstream(#[from] crate::bitstream::StreamError),
    #[error("rank-deficient least-squares design: {0}")]
    RankDeficient(String),
    #[error("target bpp {target} outside achievable range [{min}, {max}]")]
    TargetOutOfRange { target: f64, min: f64, max: f64 },
    #[error("stream was written with K={found_channels}, L={found_depth} but the model uses K={model_channels}, L={model_depth}")]
    CodeMismatch {
        found_channels: usize,
        found_depth: u8,
        model_channels: usize,
        model_depth: u8,
    },
    #[error("importance shift {0} outside [-2, 2]")]
    ShiftOutOfRange(f64),
    #[error("fitted curve is not strictly monotone on [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Error {
    Error::Shape {
        context,
        expected: expected.into(),
        actual: actual.into(),
    }
}
