use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("regular block has index 2 or higher")]
    IndexTooHigh,

    #[error("rank decision ambiguous: singular value {sigma:.3e} lies in ({lo:.3e}, {hi:.3e}); adjust tol")]
    NumericalRankAmbiguous { sigma: f64, lo: f64, hi: f64 },

    #[error("pencil is singular at every sampled lambda")]
    SingularPencilInput,

    #[error("Phi is not invertible at the current iterate (sigma_min = {sigma_min:.3e})")]
    SingularPhi {
        sigma_min: f64,
        iterate: DVector<f64>,
    },

    #[error("Newton iteration did not converge in {iterations} steps (residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        iterate: DVector<f64>,
    },

    #[error("overdetermined constraint residual {r_ov:.3e} exceeds tolerance")]
    InconsistentOverdetermined { r_ov: f64 },

    #[error("initial point is not consistent: {0}")]
    InconsistentStart(String),

    #[error("no sample could be completed to the consistency manifold")]
    SamplerEmpty,

    #[error("network graph is not connected")]
    DisconnectedGraph,

    #[error("missing boundary data: {0}")]
    MissingBoundaryData(String),

    #[error("equation of state undefined at p = {p} (1 + alpha p <= 0)")]
    StateEquationDomain { p: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
