use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// `|det| <= tolerance` for a tensor that must be inverted.
    SingularTensor {
        det: f64,
        tolerance: f64,
    },
    /// A metric argument failed the positive-definiteness test.
    NonPositiveMetric,
    /// Structure constants violate the Jacobi identity.
    JacobiViolation {
        defect: f64,
    },
    /// Structure constants are not antisymmetric in the lower indices.
    NotAntisymmetric,
    /// `(det P)^eta` or a root of a negative quantity is undefined on the evaluation set.
    DomainError(String),
    /// The curvature sign is not uniform, so the auto branch cannot be resolved.
    MixedCurvatureSign,
    /// An RK4 step produced a metric that is not positive definite (or not finite).
    StepProducedInvalidMetric {
        t: f64,
        dt: f64,
    },
    /// Grids or tensors with incompatible shapes were combined.
    ShapeMismatch(String),
    InvalidParameter(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SingularTensor { det, tolerance } => {
                write!(f, "singular tensor: |det| = {det:e} <= {tolerance:e}")
            }
            Error::NonPositiveMetric => write!(f, "metric is not positive definite"),
            Error::JacobiViolation { defect } => {
                write!(f, "structure constants violate the Jacobi identity (defect {defect:e})")
            }
            Error::NotAntisymmetric => write!(f, "structure constants are not antisymmetric"),
            Error::DomainError(msg) => write!(f, "domain error: {msg}"),
            Error::MixedCurvatureSign => {
                write!(f, "sectional curvature has no uniform sign; choose a branch explicitly")
            }
            Error::StepProducedInvalidMetric { t, dt } => {
                write!(f, "step from t = {t} with dt = {dt:e} produced an invalid metric")
            }
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
