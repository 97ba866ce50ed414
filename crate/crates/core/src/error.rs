use alloc::string::String;

/// Errors raised by the identification core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("inertia-class model requires accelerations (sample at t = {t})")]
    MissingAcceleration { t: f64 },

    #[error("singular configuration: metric min eigenvalue {min_eig:e} vs max {max_eig:e}")]
    SingularMetric { min_eig: f64, max_eig: f64 },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("singular chart map (condition number {0:e})")]
    SingularChart(f64),

    #[error("unsupported parameter layout: {0}")]
    UnsupportedLayout(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid excitation: {0}")]
    InvalidExcitation(String),

    #[error("singularity clamp violated: {0}")]
    ClampViolation(String),

    #[error("malformed SDP: {0}")]
    MalformedProblem(String),

    #[error("SDP infeasible (phase-I residual {0:e})")]
    Infeasible(f64),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("invalid estimator specification: {0}")]
    InvalidSpec(String),

    #[error("residual covariance is singular beyond ridge repair")]
    SingularCovariance,

    #[error("downsampling cannot preserve regressor rank {full} (best {best})")]
    RankNotPreserved { full: usize, best: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = core::result::Result<T, Error>;
