//! Error type shared by every module.

use thiserror::Error;

/// Failures reported by the library. Each variant names the violated precondition
/// or the certification that did not hold.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("reflection mismatch: max deviation {deviation:e} exceeds tolerance {tolerance:e}")]
    ReflectionMismatch { deviation: f64, tolerance: f64 },

    #[error("singular covariance: determinant vanishes")]
    SingularCovariance,

    #[error("many-body problem too large: L = {l} exceeds the limit {max}")]
    DimensionTooLarge { l: usize, max: usize },

    #[error("quadrature under-resolved: doubling the time grid changed the result by {change:e}")]
    QuadratureUnderResolved { change: f64 },

    #[error("fit unstable: residual {residual:e} exceeds {threshold:e}")]
    FitUnstable { residual: f64, threshold: f64 },

    #[error("no contraction: last successive-difference ratio {ratio}")]
    NoContraction { ratio: f64 },

    #[error("ball escape at scale {h}: weighted norm {norm:e} exceeds radius {radius:e}")]
    BallEscape { h: i32, norm: f64, radius: f64 },

    #[error("scale window of size {size} exceeds the limit {max}")]
    WindowTooLarge { size: usize, max: usize },

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
