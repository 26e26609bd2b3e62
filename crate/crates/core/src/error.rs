use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid tool: {0}")]
    InvalidTool(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("retry budget exhausted: {0}")]
    RetryBudget(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tool does not fit the raster frame: {0}")]
    ToolTooLarge(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("model has no task-trained checkpoint")]
    Untrained,
    #[error("no checkpoints to select from")]
    NoCheckpoints,
    #[error("bad file format in {path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Autodiff(#[from] revgrad::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
