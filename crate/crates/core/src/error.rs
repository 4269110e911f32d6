use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("word {word_index} has no subword predictions")]
    UncoveredWord { word_index: usize },
    #[error("subword word_index {found} is invalid: {reason}")]
    BadWordIndex { found: usize, reason: &'static str },
    #[error("cannot vote over zero labels")]
    EmptyVote,
    #[error("vote threshold {threshold} is invalid for {voters} voters")]
    InvalidThreshold { threshold: usize, voters: usize },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("word prediction {word_index} has no logits")]
    MissingLogits { word_index: usize },
    #[error("dataset has no training examples")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("empty query")]
    EmptyQuery,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("coverage gap: {0}")]
    CoverageGap(String),
    #[error("malformed record at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownLabel(_) => "UnknownLabel",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::UncoveredWord { .. } => "UncoveredWord",
            Error::BadWordIndex { .. } => "BadWordIndex",
            Error::EmptyVote => "EmptyVote",
            Error::InvalidThreshold { .. } => "InvalidThreshold",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::MissingLogits { .. } => "MissingLogits",
            Error::EmptyDataset => "EmptyDataset",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidEpsilon(_) => "InvalidEpsilon",
            Error::EmptyInput => "EmptyInput",
            Error::EmptyQuery => "EmptyQuery",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::HeaderMismatch(_) => "HeaderMismatch",
            Error::CoverageGap(_) => "CoverageGap",
            Error::Format { .. } => "Format",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
