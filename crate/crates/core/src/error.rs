use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("utterance {id:?}: frame width mismatch (expected {expected}, found {found})")]
    FrameWidthMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid utterance {id:?}: {message}")]
    InvalidUtterance { id: String, message: String },
    #[error("utterance {0:?} has no label but labels are required")]
    MissingLabel(String),
    #[error("bad frame file {path}: {message}")]
    BadFrameFile { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty vocabulary: no token reaches min_count {0}")]
    EmptyVocabulary(usize),
    #[error("class {0:?} has no training examples")]
    EmptyClass(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("singular accumulator in block {block}")]
    SingularBlock { block: usize },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("score matrix headers differ: {0}")]
    HeaderMismatch(String),
    #[error("unknown utterance id {0:?}")]
    UnknownId(String),
    #[error("container error: {0}")]
    Container(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::DuplicateId(_) => "duplicate_id",
            Error::FrameWidthMismatch { .. } => "frame_width_mismatch",
            Error::InvalidUtterance { .. } => "invalid_utterance",
            Error::MissingLabel(_) => "missing_label",
            Error::BadFrameFile { .. } => "bad_frame_file",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyVocabulary(_) => "empty_vocabulary",
            Error::EmptyClass(_) => "empty_class",
            Error::NonFinite(_) => "non_finite",
            Error::SingularBlock { .. } => "singular_block",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::HeaderMismatch(_) => "header_mismatch",
            Error::UnknownId(_) => "unknown_id",
            Error::Container(_) => "container",
            Error::Json(_) => "json",
        }
    }
}
