use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("all {skipped} records were skipped during ingestion")]
    AllRecordsSkipped { skipped: usize },

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("alphabet mismatch between inputs")]
    AlphabetMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error("reducible chain")]
    ReducibleChain,

    #[error("stationary iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    StationaryDiverged { iterations: usize, residual: f64 },

    #[error("absorbing subchain: (I - P_T) is singular")]
    AbsorbingSubchain,

    #[error("infeasible optimizer config: {0}")]
    InfeasibleConfig(String),

    #[error(
        "optimizer did not converge after {iterations} steps (residual {residual:.3e}, last objective {objective:.6e})"
    )]
    OptimizerDiverged {
        iterations: usize,
        residual: f64,
        objective: f64,
        /// Upper-triangle entries of the final iterate.
        last: Vec<f64>,
    },

    #[error("degenerate metric: no positive MDS eigenvalue")]
    DegenerateMetric,

    #[error("zero variance point cloud")]
    ZeroVariance,

    #[error("degenerate ellipse: covariance is rank deficient")]
    DegenerateEllipse,

    #[error("cluster has zero stationary mass")]
    ZeroMassCluster,

    #[error("alphabet of size {n} exceeds the exact-search limit {max}; use local search")]
    UseLocalSearch { n: usize, max: usize },

    #[error("grid capacity {capacity} cannot host {needed} letters")]
    CapacityExceeded { needed: usize, capacity: usize },

    #[error("text too short: need at least 2 alphabet letters")]
    TextTooShort,

    #[error("barycenter solve did not converge (residual {residual:.3e})")]
    BarycenterDiverged { residual: f64 },

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
