//! Error type shared by all kernel computations.

use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of kernel evaluation and the supporting numerics.
///
/// Every variant carries a static context string naming the operation or
/// quantity that failed; variants with data preserve the offending values
/// so callers can report them.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input contained NaN or an infinity.
    NonFinite { context: &'static str },
    /// A cosine argument fell outside `[-1, 1]` by more than the rounding
    /// slack accepted by [`crate::arccos::clamp_cosine`].
    CosineOutOfRange { value: f64 },
    /// An argument violated a documented precondition (empty input, zero
    /// subsampling factor, bad dimension, ...).
    InvalidArgument { context: &'static str },
    /// Two inputs that must agree in shape did not.
    ShapeMismatch { context: &'static str },
    /// The requested quantity is undefined for this input, e.g. a second
    /// derivative of an activation that only provides the first.
    Unsupported { context: &'static str },
    /// An iterative or quadrature computation failed to converge, or an
    /// intermediate value became non-finite.
    NumericFailure { context: &'static str },
    /// A quantity that must be nonnegative (a variance, a self kernel
    /// value, a Gram eigenvalue tolerance) came out negative.
    NegativeValue { context: &'static str, value: f64 },
    /// An input was degenerate for the requested operation, e.g. a
    /// zero-norm reference image in a relative-distance computation.
    DegenerateInput { context: &'static str },
    /// Doubling the quadrature node count moved an estimate by more than
    /// the convergence tolerance; both estimates are preserved.
    NotConverged { context: &'static str, coarse: f64, fine: f64 },
    /// A kernel plane would exceed the configured memory budget.
    PlaneBudgetExceeded { required_bytes: usize, budget_bytes: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { context } => {
                write!(f, "non-finite input in {context}")
            }
            Error::CosineOutOfRange { value } => {
                write!(f, "cosine argument {value:e} outside [-1, 1] beyond rounding slack")
            }
            Error::InvalidArgument { context } => {
                write!(f, "invalid argument: {context}")
            }
            Error::ShapeMismatch { context } => {
                write!(f, "shape mismatch: {context}")
            }
            Error::Unsupported { context } => {
                write!(f, "unsupported operation: {context}")
            }
            Error::NumericFailure { context } => {
                write!(f, "numeric failure: {context}")
            }
            Error::NegativeValue { context, value } => {
                write!(f, "negative value {value:e} where nonnegative required: {context}")
            }
            Error::DegenerateInput { context } => {
                write!(f, "degenerate input: {context}")
            }
            Error::NotConverged { context, coarse, fine } => {
                write!(
                    f,
                    "{context} did not converge under node doubling: {coarse:e} vs {fine:e}"
                )
            }
            Error::PlaneBudgetExceeded { required_bytes, budget_bytes } => {
                write!(
                    f,
                    "kernel plane needs {required_bytes} bytes, budget is {budget_bytes}"
                )
            }
        }
    }
}

impl core::error::Error for Error {}
