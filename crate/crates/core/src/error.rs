use thiserror::Error;

/// Errors raised by the field solvers and the contrast optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} did not converge: estimate {estimate:e}, error bound {error_bound:e}")]
    NotConverged {
        what: String,
        estimate: f64,
        error_bound: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular dark-zone correlation matrix; use a positive regularization")]
    SingularDarkMatrix,

    #[error("missing transfer values at {count} control point(s), first at ({x}, {z})")]
    MissingPoints { count: usize, x: f64, z: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
