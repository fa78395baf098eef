use thiserror::Error;

/// Errors raised by the model, simulator, learner and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spreading factor {0} outside 7..=12")]
    InvalidSpreadingFactor(u8),

    #[error("transmission power {0} dBm not one of 2, 4, ..., 16")]
    InvalidTxPower(i32),

    #[error("action index {0} outside the 48-action space")]
    InvalidAction(usize),

    #[error("end device {ed} is co-located with gateway {gw}")]
    ColocatedGateway { ed: usize, gw: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("horizon of {horizon_s} s too short: end device {ed} sent no packet")]
    HorizonTooShort { ed: usize, horizon_s: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("environment used before reset")]
    NotReset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
