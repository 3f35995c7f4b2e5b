use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corpus root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("zero images found under {0}")]
    ZeroImages(PathBuf),
    #[error("no character has more than {min_images} images")]
    EmptyVocabulary { min_images: usize },
    #[error("unsupported glyph side {0}; expected 32, 64 or 128")]
    UnsupportedSide(u32),
    #[error("image {path}: {reason}")]
    BadImage { path: String, reason: String },
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding provider mismatch: {0} vs {1}")]
    ProviderMismatch(String, String),
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("embedding provider failed on {text:?}: {reason}")]
    Provider { text: String, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown style `{requested}`; available: [{}]", available.join(", "))]
    UnknownStyle { requested: String, available: Vec<String> },
    #[error("layout infeasible: {reason}; whitespace ratio must be at most {max_ratio:.3}")]
    LayoutInfeasible { reason: String, max_ratio: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }
}
