use std::path::PathBuf;

use thiserror::Error;

use crate::fixed_point::FixedFormat;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),

    #[error("operand formats differ: {lhs} vs {rhs}")]
    FormatMismatch { lhs: FixedFormat, rhs: FixedFormat },

    #[error("shift of {shift} bits out of range for {format}")]
    ShiftOutOfRange { shift: u32, format: FixedFormat },

    #[error("non-finite value {0} cannot be quantized")]
    NonFinite(f64),

    #[error("invalid kernel specification: {0}")]
    InvalidKernel(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error(
        "coefficient magnitude {magnitude} does not fit {format}; \
         {required_int_bits} integer bits required"
    )]
    Unrepresentable {
        magnitude: f64,
        format: FixedFormat,
        required_int_bits: u32,
    },

    #[error("degenerate softmax denominator: every exponential of kernel {kernel} quantizes to zero in {format}")]
    DegenerateDenominator { kernel: String, format: FixedFormat },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("empty input vector")]
    EmptyInput,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::DegenerateDenominator { .. } => ErrorClass::Numeric,
            Error::Context { source, .. } => source.class(),
            _ => ErrorClass::Config,
        }
    }
}
