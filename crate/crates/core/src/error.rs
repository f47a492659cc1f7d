use std::path::PathBuf;

use crate::types::{EntryId, LabelId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("record {index}: dimension {found} does not match {expected}")]
    RecordDimension {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("label id {label} out of range for {num_labels} labels")]
    InvalidLabel { label: LabelId, num_labels: usize },

    #[error("unknown label name {0:?}")]
    UnknownLabelName(String),

    #[error("duplicate label name {0:?}")]
    DuplicateLabelName(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("query against an empty datastore")]
    EmptyDatastore,

    #[error("neighbor set is empty")]
    EmptyNeighbors,

    #[error("entry {0} not found")]
    NotFound(EntryId),

    #[error("duplicate entry id {0}")]
    DuplicateId(EntryId),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("datastore format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("query shares no tokens with the index vocabulary")]
    DegenerateQuery,

    #[error("{}:{line}: {reason}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("query {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short name, used for the machine-readable CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } | Error::RecordDimension { .. } => "dimension",
            Error::InvalidLabel { .. } | Error::UnknownLabelName(_) => "invalid_label",
            Error::DuplicateLabelName(_) => "duplicate_label",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::EmptyInput(_) => "empty_input",
            Error::NonFinite { .. } => "non_finite",
            Error::EmptyDatastore => "empty_datastore",
            Error::EmptyNeighbors => "empty_neighbors",
            Error::NotFound(_) => "not_found",
            Error::DuplicateId(_) => "duplicate_id",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::InvalidConfig(_) => "invalid_config",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Format { .. } => "format",
            Error::DegenerateQuery => "degenerate_query",
            Error::Parse { .. } => "parse",
            Error::Batch { source, .. } => source.kind(),
            Error::Io(_) => "io",
        }
    }
}
