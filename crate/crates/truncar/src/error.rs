use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers that must map failures to process
/// exit codes: bad configuration or input data versus a numerical breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid edge: {0}")]
    InvalidEdge(String),

    #[error("region {0} has no neighbors")]
    IsolatedRegion(usize),

    #[error("parameter out of range: {0}")]
    ParameterRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid observation mask: {0}")]
    InvalidMask(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("series did not converge: {0}")]
    NoConvergence(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("conditional-specification check failed: residual {residual:e} exceeds 1e-8")]
    RepresentationMismatch { residual: f64 },

    #[error("truth values unavailable")]
    TruthUnavailable,

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::SingularDesign(_)
            | Error::NoConvergence(_)
            | Error::NumericalFailure(_)
            | Error::RepresentationMismatch { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Config,
        }
    }
}
