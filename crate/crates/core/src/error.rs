use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GamError> = std::result::Result<T, E>;

/// Errors raised across the pipeline. Each variant maps to a stable code
/// (see [`GamError::code`]) that the CLI reports.
#[derive(Debug, Error)]
pub enum GamError {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{doc_id}: {field}: overlapping spans {detail}")]
    Overlap {
        doc_id: String,
        field: String,
        detail: String,
    },

    #[error("{doc_id}: {field}: span out of range {detail}")]
    Range {
        doc_id: String,
        field: String,
        detail: String,
    },

    #[error("{doc_id}: unknown role `{role}` for event type `{event_type}`")]
    Role {
        doc_id: String,
        event_type: String,
        role: String,
    },

    #[error("{location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("event type `{0}` is not in the ontology")]
    Ontology(String),

    #[error("invalid fusion coefficients alpha={alpha}, beta={beta} (need alpha>=0, beta>=0, alpha+beta<=1)")]
    Coef { alpha: f64, beta: f64 },

    #[error("invalid span: {0}")]
    Span(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GamError {
    pub fn code(&self) -> &'static str {
        match self {
            GamError::NonFinite(_) => "E_NONFINITE",
            GamError::Shape(_) => "E_SHAPE",
            GamError::Overlap { .. } => "E_OVERLAP",
            GamError::Range { .. } => "E_RANGE",
            GamError::Role { .. } => "E_ROLE",
            GamError::Parse { .. } => "E_PARSE",
            GamError::Ontology(_) => "E_ONTOLOGY",
            GamError::Coef { .. } => "E_COEF",
            GamError::Span(_) => "E_SPAN",
            GamError::Config(_) => "E_CONFIG",
            GamError::Vocab(_) => "E_VOCAB",
            GamError::Checkpoint(_) => "E_CHECKPOINT",
            GamError::Io { .. } => "E_IO",
            GamError::Json(_) => "E_PARSE",
        }
    }

    /// Input/validation problems (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            GamError::Io { .. } | GamError::NonFinite(_) | GamError::Checkpoint(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GamError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GamError::Shape(msg.into())
    }
}
