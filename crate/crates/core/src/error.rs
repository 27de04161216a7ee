use thiserror::Error;

/// Errors raised by model construction, transforms and fitting.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GmcmError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("covariance factor of component {component} is numerically singular")]
    SingularFactor { component: usize },
    #[error("covariance of component {component} is not positive definite")]
    NonPositiveDefinite { component: usize },
    #[error("column {column} is constant; ranks are undefined")]
    DegenerateColumn { column: usize },
    #[error("inverse CDF grid is empty")]
    EmptyGrid,
    #[error("label vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation {rho} outside ({lower}, 1) required for positive definiteness")]
    RhoOutOfRange { rho: f64, lower: f64 },
    #[error("gradient has non-finite entries")]
    NonFiniteGradient,
    #[error("initialization failed: {0}")]
    InitFailure(String),
    #[error("component {component} has collapsed (responsibility mass underflow)")]
    CollapsedComponent { component: usize },
    #[error("unknown simulation setting {0}; expected 1..=8")]
    InvalidSetting(u8),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<GmcmError>,
    },
}

impl GmcmError {
    pub(crate) fn at(self, iteration: usize) -> Self {
        match self {
            GmcmError::AtIteration { .. } => self,
            other => GmcmError::AtIteration {
                iteration,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, GmcmError>;
