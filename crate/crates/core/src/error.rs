use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("degenerate pendulum state (r1 = {r1})")]
    DegenerateState { r1: f64 },
    #[error("stopper length {r2} outside bounds")]
    InfeasibleStopper { r2: f64 },
    #[error("action out of bounds: {0}")]
    ActionOutOfBounds(String),
    #[error("contact {to} is not reachable from contact {from}")]
    DisallowedContact { from: usize, to: usize },
    #[error("contact {from} has no allowed successor")]
    NoAllowedContact { from: usize },
    #[error("every grid action fails")]
    NoFeasibleAction,
    #[error("degenerate triangle prediction (r = {r_hat}, theta = {theta_hat})")]
    DegeneratePrediction { r_hat: f64, theta_hat: f64 },
    #[error("topology mismatch: expected {expected}, found {found}")]
    TopologyMismatch { expected: String, found: String },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime fault.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParams(_) | Error::ConfigInvalid(_))
    }
}
