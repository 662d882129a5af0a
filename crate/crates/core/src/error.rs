use thiserror::Error;

/// Errors raised by geometry, discretization, solver and harness code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("degenerate jacobian: det = {det:.3e} below threshold {threshold:.3e}")]
    DegenerateJacobian { det: f64, threshold: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("grid is not aligned with the epsilon lattice: {0}")]
    MisalignedGrid(String),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("non-finite coefficient at {0:?}")]
    NonFiniteCoefficient([f64; 2]),

    #[error("negative reaction weight {value} at {point:?}")]
    NegativeReaction { value: f64, point: [f64; 2] },

    #[error("CG exceeded {iterations} iterations (relative residual {residual:.3e})")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },

    #[error("coercivity violation: min eigenvalue {found:.4e} below {required:.4e}")]
    CoercivityViolation { found: f64, required: f64 },

    #[error("inverted element {element}: mapped jacobian {det:.3e}")]
    InvertedElement { element: usize, det: f64 },

    #[error("tiling error: {0}")]
    Tiling(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
