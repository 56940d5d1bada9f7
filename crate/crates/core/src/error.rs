use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("invalid field spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at x = {x:?}")]
    NonFinite { what: &'static str, x: [f64; 3] },

    /// ‖∇f‖ fell below the floor at a point where a residual divides by it.
    #[error("degenerate gradient |grad f| = {norm:e} at x = {point:?} (term {term:?}, sample {sample:?})")]
    DegenerateGradient {
        point: [f64; 3],
        norm: f64,
        term: Option<usize>,
        sample: Option<usize>,
    },

    #[error("principal-curvature discriminant {value:e} is negative beyond round-off at x = {point:?}")]
    NegativeDiscriminant { point: [f64; 3], value: f64 },

    #[error("Gramian is rank deficient with epsilon = {epsilon:e}; use epsilon > 0")]
    RankDeficient { epsilon: f64 },

    #[error("linear solver aborted: {0}")]
    SolverBreakdown(String),

    #[error("level set of term {term} produced no converged surface samples")]
    EmptySurface { term: usize },

    #[error("line search failed: every candidate loss was non-finite")]
    LineSearchFailed,

    #[error("divergence at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("surface {0} has no closed-form signed distance")]
    UnsupportedSurface(&'static str),

    #[error("empty point set")]
    EmptySet,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ShapeError> = std::result::Result<T, E>;
