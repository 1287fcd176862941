use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // corpus
    #[error("invalid language tag {0:?}: expected exactly 3 lowercase ASCII letters")]
    InvalidLanguageTag(String),
    #[error("source and target language are both {0}")]
    SameLanguage(String),
    #[error("line count mismatch: {src_lines} source lines vs {tgt_lines} target lines")]
    LineCountMismatch { src_lines: usize, tgt_lines: usize },
    #[error("empty line at index {index} ({side} side)")]
    EmptyLine { index: usize, side: &'static str },
    #[error("invalid UTF-8 in {path}")]
    InvalidEncoding { path: PathBuf },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus has {0} pairs; at least 2 are needed to split")]
    TooFewPairs(usize),
    #[error("train fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),

    // perturbation
    #[error("text is empty")]
    EmptyText,
    #[error("sentence has {tokens} tokens; at least {required} are required")]
    TooShort { tokens: usize, required: usize },
    #[error("malformed perturbed sentence: expected one placeholder, found {0}")]
    MalformedPerturbed(usize),

    // templates and datasets
    #[error("template {template_id} is missing placeholder {placeholder}")]
    MissingPlaceholder { template_id: String, placeholder: String },
    #[error("template {template_id} uses unknown placeholder {placeholder}")]
    UnknownPlaceholder { template_id: String, placeholder: String },
    #[error("duplicate template id {0}")]
    DuplicateTemplateId(String),
    #[error("no template for task {0}")]
    NoTemplateForTask(String),
    #[error("no display name for language {0}")]
    MissingDisplayName(String),
    #[error("granularity mismatch: template {template_id} expects {expected}, perturbation is {found}")]
    GranularityMismatch {
        template_id: String,
        expected: String,
        found: String,
    },
    #[error("task mismatch: template {template_id} is for {found}, expected {expected}")]
    TaskMismatch {
        template_id: String,
        expected: String,
        found: String,
    },
    #[error("schema violation at line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("invalid value: {0}")]
    Invalid(String),

    // replay
    #[error("replay size {requested} exceeds source size {available}")]
    ReplayLargerThanSource { requested: usize, available: usize },
    #[error("batch size {0} must be even and at least 2")]
    OddBatchSize(usize),
    #[error("new data is empty")]
    EmptyNewData,
    #[error("example id {0} not found while resolving a batch plan")]
    UnknownExampleId(String),
    #[error("digest mismatch for {what}: expected {expected}, found {found}")]
    DigestMismatch {
        what: String,
        expected: String,
        found: String,
    },

    // trainer
    #[error("no data")]
    EmptyData,
    #[error("token id {id} is out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence of length {len} exceeds context {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("loss mask selects no positions")]
    AllMasked,
    #[error("non-finite loss at step {step} (batch {batch_ids:?})")]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },
    #[error("empty schedule")]
    EmptySchedule,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    // evaluator
    #[error("unknown label {label:?} at row {row}")]
    UnknownLabel { label: String, row: usize },
    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to score")]
    Empty,
    #[error("no evaluation templates")]
    NoTemplates,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("no verbalizer for prompt language {0}")]
    MissingVerbalizer(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than a
    /// failure while doing work.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::Csv(_))
    }
}
