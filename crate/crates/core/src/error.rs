use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("no geodesic between nodes {x} and {y}")]
    NoGeodesic { x: usize, y: usize },
    #[error("more than {cap} geodesics between nodes {x} and {y}")]
    GeodesicCap { x: usize, y: usize, cap: usize },
    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("{0} requires a segment space")]
    NotSegment(&'static str),
    #[error("size cap exceeded: {0}")]
    CapExceeded(String),
    #[error("step size mismatch at splice: {0} vs {1}")]
    StepMismatch(f64, f64),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
