//! Model capabilities the pipeline depends on. Implementations (lookup-table
//! stubs, HTTP clients) live outside this crate.

use alloc::string::String;

use crate::label::{LabelSet, SpecialistPrediction};
use crate::vector::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// The backend could not be reached or did not answer in time.
    #[error("backend {backend}: transport failure: {message}")]
    Transport { backend: String, message: String },
    /// The backend answered, but not with something we can use.
    #[error("backend {backend}: protocol error: {message}")]
    Protocol { backend: String, message: String },
    /// A stub has no entry for the requested image.
    #[error("backend {backend}: no entry for {key:?}")]
    MissingKey { backend: String, key: String },
}

impl BackendError {
    pub fn backend(&self) -> &str {
        match self {
            BackendError::Transport { backend, .. }
            | BackendError::Protocol { backend, .. }
            | BackendError::MissingKey { backend, .. } => backend,
        }
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self, BackendError::Protocol { .. })
    }
}

/// Generalist model: image + instruction in, text out.
pub trait Generate: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError>;
}

/// Specialist classifier for one label set.
pub trait Predict: Send + Sync {
    fn id(&self) -> &str;
    fn predict(&self, image_ref: &str, labels: &LabelSet) -> Result<SpecialistPrediction, BackendError>;
}

/// Image encoder used to key the retrieval database.
pub trait Embed: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError>;
}
