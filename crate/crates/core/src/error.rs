use thiserror::Error;
use tgmr_autograd::AutogradError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autograd(#[from] AutogradError),

    #[error("coordinate ({x}, {y}) outside frame {width}x{height}")]
    OutOfBounds { x: f64, y: f64, width: f64, height: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("dataset {location}: {msg}")]
    Dataset { location: String, msg: String },

    #[error("template `{template}`: goal {goal:?} unreachable from {start:?}")]
    Unreachable {
        template: String,
        start: (usize, usize),
        goal: (usize, usize),
    },

    #[error("K = {k} exceeds the {space} distinct node sequences available")]
    SearchSpace { k: usize, space: String },

    #[error("all candidate probabilities are zero")]
    ZeroProbability,

    #[error("non-finite loss on sample `{0}`")]
    NonFiniteLoss(String),

    #[error("missing predictions for sample ids: {0:?}")]
    MissingIds(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by user input (config, data, arguments) rather than a
    /// defect or environment failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Autograd(AutogradError::Io(_)) | Error::NonFiniteLoss(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
