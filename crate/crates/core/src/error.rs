use crate::grid::Field;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure report of a nonlinear solve: the best iterate seen and the
/// residual after every iteration.
#[derive(Debug, Clone)]
pub struct NoConvergence {
    pub best: Field,
    pub best_residual: f64,
    pub history: Vec<f64>,
}

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("g_0^0 is multivalued at z = 0; use a saturated section instead")]
    MultivaluedAtZero,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("resolvent did not converge: residual {:.3e} after {} iterations", .0.best_residual, .0.history.len())]
    NoConvergence(Box<NoConvergence>),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
