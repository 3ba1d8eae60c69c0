use thiserror::Error;

use crate::mlp::MlpNetwork;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),

    #[error("unsupported modulation: {bits_per_symbol} bits per symbol (only 4-QAM is supported)")]
    UnsupportedModulation { bits_per_symbol: usize },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid multipath profile: {0}")]
    InvalidProfile(String),

    #[error("cyclic prefix of {cp_len} samples is shorter than the delay spread {max_delay}")]
    IsiViolation { cp_len: usize, max_delay: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular pilot at subcarrier {bin}")]
    SingularPilot { bin: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("undefined fit: {0}")]
    UndefinedFit(String),

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("training diverged at epoch {epoch} (sample {sample})")]
    Diverged {
        epoch: usize,
        sample: usize,
        /// Last network whose cost was finite.
        last_finite: Box<MlpNetwork>,
    },

    #[error("invalid config key `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
