use thiserror::Error;

pub type Result<T> = std::result::Result<T, MerwError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MerwError {
    /// The environment description is malformed (negative weight, empty window, ...).
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    /// The loop distribution does not satisfy the well-posedness hypothesis:
    /// supported on [0, M], not a point mass at M, with M in its support.
    #[error("ill-posed loop distribution: {0}")]
    IllPosedDistribution(String),

    #[error("environment kind `{0}` has no extremal eigenvector pair")]
    UnsupportedEnvironment(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pole of g: lambda - s - x = {0} is not positive")]
    Pole(f64),

    #[error(
        "bracket at site {site} did not reach tolerance {tol:e}: width {width:e} after {depth} compositions"
    )]
    NonConverged {
        site: i64,
        width: f64,
        tol: f64,
        depth: usize,
    },

    #[error("window [{lo}, {hi}] must lie strictly inside the eigenvector window [{ev_lo}, {ev_hi}]")]
    WindowOutside { lo: i64, hi: i64, ev_lo: i64, ev_hi: i64 },

    #[error("numerically infinite occupation: {0}")]
    NumericallyInfinite(String),

    #[error("too many non-converged samples: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },
}

impl MerwError {
    /// True for failures of the numerics (as opposed to rejected input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MerwError::NonConverged { .. }
                | MerwError::NumericallyInfinite(_)
                | MerwError::TooManyFailures { .. }
                | MerwError::Pole(_)
        )
    }
}
