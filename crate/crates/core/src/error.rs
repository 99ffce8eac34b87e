use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("state diverged at step {step}")]
    Divergence { step: u64 },

    #[error("{dropped} of {total} ensemble members diverged (limit 1%)")]
    EnsembleDivergence { dropped: usize, total: usize },

    #[error("need at least {needed} samples, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("SST operator is non-finite from t = {from} but the blend uses it until t = {cutoff}")]
    NonFiniteResponse { from: f64, cutoff: f64 },

    #[error("covariance is singular (condition number {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("response grids do not match")]
    GridMismatch,

    #[error("response horizon runs past the end of the trajectory (step {needed}, last {last})")]
    HorizonExceeded { needed: u64, last: u64 },

    #[error("trajectory has no recorded state at step {0}")]
    NotRecorded(u64),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::EnsembleDivergence { .. }
                | Error::SingularCovariance { .. }
                | Error::NonFiniteResponse { .. }
        )
    }
}
