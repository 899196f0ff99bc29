use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset contains no comparison records")]
    EmptyDataset,

    #[error("item index {index} out of range for {n_items} items (record {record})")]
    ItemIndexOutOfRange {
        record: usize,
        index: usize,
        n_items: usize,
    },

    #[error("record {record} compares item {item} with itself")]
    SelfComparison { record: usize, item: usize },

    #[error("record {record} has invalid weight {weight}")]
    InvalidWeight { record: usize, weight: f64 },

    #[error("record {record} has outcome {outcome}; binary losses need +1 or -1")]
    NonBinaryOutcomeForGlm { record: usize, outcome: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("step size {alpha} violates the stability bound (alpha*kappa*norm/m = {ratio:.4} >= 2)")]
    StepSizeTooLarge { alpha: f64, ratio: f64 },

    #[error("{what} did not converge within {iters} iterations")]
    NoConvergence { what: &'static str, iters: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query t = {t} outside path range [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },

    #[error("grid point t = {t} exceeds the fitted path (t_max = {t_max})")]
    GridExceedsPath { t: f64, t_max: f64 },

    #[error("fold {0} is empty")]
    EmptyFold(usize),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("parse error at {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("header mismatch in {file}: expected {expected}, found {found}")]
    HeaderMismatch {
        file: String,
        expected: String,
        found: String,
    },

    #[error("duplicate feature row for item {item} in {file}")]
    DuplicateFeatureRow { file: String, item: String },

    #[error("dataset hash mismatch: file was written for {expected}, dataset is {found}")]
    HashMismatch { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short name, printed by the CLI on failure.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "EmptyDataset",
            Error::ItemIndexOutOfRange { .. } => "ItemIndexOutOfRange",
            Error::SelfComparison { .. } => "SelfComparison",
            Error::InvalidWeight { .. } => "InvalidWeight",
            Error::NonBinaryOutcomeForGlm { .. } => "NonBinaryOutcomeForGLM",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::StepSizeTooLarge { .. } => "StepSizeTooLarge",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::GridExceedsPath { .. } => "GridExceedsPath",
            Error::EmptyFold(_) => "EmptyFold",
            Error::EmptyTestSet => "EmptyTestSet",
            Error::Parse { .. } => "ParseError",
            Error::HeaderMismatch { .. } => "HeaderMismatch",
            Error::DuplicateFeatureRow { .. } => "DuplicateFeatureRow",
            Error::HashMismatch { .. } => "HashMismatch",
            Error::Io { .. } => "IoError",
        }
    }

    /// Process exit code. Each variant maps to its own code; 1 and 2 are
    /// left to the CLI for internal and usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 10,
            Error::HeaderMismatch { .. } => 11,
            Error::DuplicateFeatureRow { .. } => 12,
            Error::Io { .. } => 13,
            Error::HashMismatch { .. } => 14,
            Error::EmptyDataset => 20,
            Error::ItemIndexOutOfRange { .. } => 21,
            Error::SelfComparison { .. } => 22,
            Error::InvalidWeight { .. } => 23,
            Error::NonBinaryOutcomeForGlm { .. } => 24,
            Error::DimensionMismatch(_) => 25,
            Error::StepSizeTooLarge { .. } => 30,
            Error::NoConvergence { .. } => 31,
            Error::InvalidConfig(_) => 32,
            Error::OutOfRange { .. } => 40,
            Error::GridExceedsPath { .. } => 41,
            Error::EmptyFold(_) => 42,
            Error::EmptyTestSet => 43,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
