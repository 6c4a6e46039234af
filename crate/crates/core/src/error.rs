use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate orientation: heading undefined at gimbal condition")]
    DegenerateOrientation,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Least-squares geometry is rank deficient or badly conditioned.
    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    /// An access point coincides with the position the Jacobian is taken at.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    /// Gradient descent produced a non-finite cost; carries the last finite
    /// parameter vector.
    #[error("calibration diverged at iteration {iteration}")]
    Divergence { iteration: usize, last_finite: Vec<f64> },

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
