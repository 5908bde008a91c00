//! Error type shared by all modules.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Caller passed inconsistent shapes or out-of-range parameters.
    InvalidArgument(String),
    /// Matrix dimensions do not line up for the requested operation.
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    /// The input is too close to singular / rank-deficient for the operation.
    DegenerateInput(String),
    /// An iterative numeric kernel failed to converge.
    NumericFailure(String),
    /// A preconditioner factor is numerically singular and no smoothing was requested.
    SingularPreconditioner { factor: &'static str },
    /// A training run exceeded the divergence threshold.
    Divergence { step: usize, risk: f64 },
    /// I/O or container-format failure while (de)serializing.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {}x{} vs {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)
            }
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
            Error::SingularPreconditioner { factor } => {
                write!(f, "singular preconditioner on the {factor} side (lambda = 0, plain inverse requested)")
            }
            Error::Divergence { step, risk } => {
                write!(f, "training diverged at step {step} (risk {risk:.3e})")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
