use std::path::PathBuf;

use crate::corpus::QuestionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("duplicate question id {id} on lines {first} and {second}")]
    DuplicateId {
        id: QuestionId,
        first: usize,
        second: usize,
    },

    #[error("empty question")]
    EmptyQuestion,

    #[error("not a {kind} file (bad magic)")]
    BadMagic { kind: &'static str },

    #[error("unsupported version: {found} (expected {expected})")]
    UnsupportedVersion { found: String, expected: &'static str },

    #[error("unexpected end of {0} file")]
    Truncated(&'static str),

    #[error("trailing bytes after {0} file contents")]
    TrailingData(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("vocabulary too small for negative sampling ({vocab} tokens, {negatives} negatives)")]
    VocabTooSmall { vocab: usize, negatives: usize },

    #[error("no entity-disjoint negative found after {0} attempts")]
    NoNegative(usize),

    #[error("training diverged at epoch {epoch} (lr {lr}): loss is not finite")]
    Diverged { epoch: usize, lr: f64 },

    #[error("missing labels for {} pair(s): {}", .0.len(), fmt_pairs(.0))]
    MissingLabels(Vec<(QuestionId, QuestionId)>),

    #[error("empty template bank")]
    EmptyTemplateBank,
}

fn fmt_pairs(pairs: &[(QuestionId, QuestionId)]) -> String {
    pairs
        .iter()
        .map(|(q, c)| format!("({q}, {c})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
