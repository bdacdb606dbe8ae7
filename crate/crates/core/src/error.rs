use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("divergence at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("shadow coverage error: samples {0:?} lack IN or OUT shadows")]
    Coverage(Vec<usize>),

    #[error("threat-model error: {0}")]
    ThreatModel(String),

    #[error("contamination error: {0}")]
    Contamination(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
