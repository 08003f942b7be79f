use thiserror::Error;

/// Errors raised across the first-passage pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FptError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular clock: h({0}) = 0")]
    SingularClock(f64),

    #[error("unsupported start: boundary starts at {0}, the martingale starts at 0")]
    UnsupportedStart(f64),

    #[error("ill-posed boundary: {0}")]
    IllPosedBoundary(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: estimate {estimate}, error {error}")]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
    },

    #[error("terminal limit did not converge: {0}")]
    Convergence(ConvergenceDiagnostics),

    #[error("step-size error: {0}")]
    StepSize(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("empty sample")]
    EmptySample,

    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

/// Values observed while refining the terminal offset of the bridge limit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceDiagnostics {
    pub delta_fracs: Vec<f64>,
    pub estimates: Vec<f64>,
    pub relative_change: f64,
}

impl std::fmt::Display for ConvergenceDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "relative change {:.3e} over delta {:?} (estimates {:?})",
            self.relative_change, self.delta_fracs, self.estimates
        )
    }
}

pub type Result<T> = std::result::Result<T, FptError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(FptError::Domain(msg.into()))
}
