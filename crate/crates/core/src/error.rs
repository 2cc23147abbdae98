use thiserror::Error;

/// Errors produced by the matching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input value or parameter (negative sigma, even window, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Shape or dimension mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Manifest or JSON schema violation, with the offending line when known.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Configuration file problem.
    #[error("config: {0}")]
    Config(String),

    /// A required artifact (checkpoint, manifest, image) is missing.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
