use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::manifold::ProductPoint;
use crate::rcg::RcgTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate retraction: {0}")]
    DegenerateRetraction(String),

    #[error("search direction is not a descent direction (<grad, d> = {slope:e})")]
    InvalidDirection { slope: f64 },

    /// The bracketing budget ran out before both Wolfe inequalities held.
    #[error("line search failed after {evaluations} evaluations")]
    LineSearchFailed {
        evaluations: usize,
        /// Largest step seen that satisfied the sufficient-decrease inequality.
        best_armijo_alpha: Option<f64>,
    },

    #[error("solver stalled at iteration {iteration}: steepest-descent line search failed")]
    SolverStalled {
        iteration: usize,
        point: Box<ProductPoint>,
        trace: Box<RcgTrace>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix completion did not converge: relative residual {residual:e} after {iterations} iterations")]
    CompletionFailed {
        iterations: usize,
        residual: f64,
        last: Box<DMatrix<Complex64>>,
    },

    #[error("reconstruction of {which} failed: {source}")]
    Reconstruction {
        which: String,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible power allocation: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
