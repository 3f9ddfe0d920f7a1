use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor dimension violates a precondition (divisibility, size bounds).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A mask operation required foreground pixels and found none.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// An activation or parameter overflowed to NaN/inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A scene description is unrenderable (e.g. trajectory leaves the canvas).
    #[error("invalid scene spec: {0}")]
    Spec(String),

    /// Input files are missing, malformed, or inconsistent with each other.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 for usage/data problems the user
    /// can fix, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Spec(_) | Error::Data(_) | Error::Dimension(_) | Error::Io(_)
            | Error::Json(_) | Error::Image(_) | Error::EmptyMask(_) => 2,
            Error::ShapeMismatch(_) | Error::NonFinite(_) => 1,
        }
    }
}
