use thiserror::Error;

/// Errors produced anywhere in the SQR toolkit.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SqrError {
    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),

    #[error("invalid knot count {requested}: must lie in [2, {max}]")]
    InvalidKnotCount { requested: usize, max: usize },

    #[error("tau = {tau} lies outside the knot span [{lo}, {hi}]")]
    OutOfSpan { tau: f64, lo: f64, hi: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("interior point hit the iteration limit ({iterations}) with gap {gap:e}")]
    MaxIterExceeded { iterations: usize, gap: f64 },

    #[error("normal equations are numerically singular (rank-deficient design or degenerate penalty)")]
    SingularNormalEquations,

    #[error("second-derivative basis is identically zero; cannot normalise spar")]
    DegeneratePenalty,

    #[error("every smoothing parameter on the grid failed to solve")]
    SelectionFailed,

    #[error("every frequency failed to solve")]
    SpectrumFailed,

    #[error("value {0} outside the open unit interval")]
    Domain(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ingest error at row {row}, column {column}: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl SqrError {
    /// True for errors raised by a numerical solver rather than by bad input.
    pub fn is_solver_error(&self) -> bool {
        matches!(
            self,
            SqrError::NotConverged(_)
                | SqrError::MaxIterExceeded { .. }
                | SqrError::SingularNormalEquations
                | SqrError::SelectionFailed
                | SqrError::SpectrumFailed
        )
    }
}

impl From<std::io::Error> for SqrError {
    fn from(e: std::io::Error) -> Self {
        SqrError::Io(e.to_string())
    }
}

impl From<csv::Error> for SqrError {
    fn from(e: csv::Error) -> Self {
        SqrError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SqrError>;
