use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("scene placement failed after {attempts} attempts")]
    PlacementFailed { attempts: usize },

    #[error("views {from} and {to} are not adjacent on the rig")]
    NonAdjacentViews { from: String, to: String },

    #[error("feature volume is not in the reference frame")]
    FrameMismatch,

    #[error("transform is not rigid")]
    NonRigid,

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("backward requested for a value that is not on the tape")]
    NotOnTape,

    #[error("format error: {0}")]
    Format(String),

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
