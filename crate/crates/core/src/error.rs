use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("token id {id} out of vocabulary (size {vocab})")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("malformed separation target: {0}")]
    MalformedTarget(String),

    #[error("window has more than two residents")]
    TooManyResidents,

    #[error("event at position {0} carries no resident/activity annotation")]
    MissingAnnotation(usize),

    #[error("probability {0} outside (0, 1)")]
    ProbabilityDomain(f64),

    #[error("vocabulary misalignment: expected width {expected}, got {got}")]
    VocabMisalignment { expected: usize, got: usize },

    #[error("label index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fold plan needs exactly 26 days, got {0}")]
    DayCount(usize),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
