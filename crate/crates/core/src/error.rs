use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("id {id} out of range for {kind} (size {size})")]
    OutOfRangeId {
        kind: &'static str,
        id: usize,
        size: usize,
    },
    #[error("question {0} has no related concept")]
    OrphanQuestion(usize),
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("malformed log row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("simulator step limit of {0} exceeded")]
    StepLimitExceeded(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("element {0} is not a member of the set")]
    ElementNotInSet(usize),
    #[error("cannot encode an empty set")]
    EmptySet,
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("action set is empty")]
    EmptyActionSet,
    #[error("requested {k} concepts but only {available} exist")]
    KTooLarge { k: usize, available: usize },
    #[error("learning target already mastered (E_b = E_max = {0})")]
    AlreadyMastered(usize),
    #[error("non-finite loss at episode {episode}")]
    DivergenceDetected { episode: usize },
    #[error("checkpoint mismatch: expected config hash {expected}, found {found}")]
    CheckpointMismatch { expected: String, found: String },
    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration problems are distinguished from runtime failures by the CLI.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::MissingFile(_)
                | Error::UnknownStrategy { .. }
                | Error::OutOfRangeId { .. }
                | Error::OrphanQuestion(_)
                | Error::EmptyEdgeList
                | Error::CheckpointMismatch { .. }
                | Error::KTooLarge { .. }
        )
    }
}
