use thiserror::Error;

/// Errors raised by training, evaluation and the artifact pipeline.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("statistics: {0}")]
    Stats(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Core(#[from] pcparb_core::CoreError),

    #[error(transparent)]
    Neural(#[from] pcparb_neural::NeuralError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
