use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point: log-density is not finite at {0:?}")]
    InvalidPoint(Vec<f64>),

    #[error("upsilon requires unimodal target")]
    NotUnimodal,

    #[error("quadrature did not converge ({reason}); partial estimate {estimate} with error estimate {error}")]
    Quadrature {
        estimate: f64,
        error: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variant/parametrization mismatch: {0}")]
    Mismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-integrable test function: value {value} at {point:?}")]
    NonIntegrable { point: Vec<f64>, value: f64 },

    #[error("data-dependent schedule has no analytic limsup")]
    NoAnalyticLimit,

    #[error("target moments unknown")]
    UnknownMoments,

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("unknown plot kind {kind:?}; available: {available}")]
    UnknownKind { kind: String, available: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
