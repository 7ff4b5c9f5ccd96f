use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed scan: {len} bytes is not a multiple of 16")]
    MalformedScan { len: usize },
    #[error("malformed labels: {len} bytes is not a multiple of 4")]
    MalformedLabels { len: usize },
    #[error("corrupt value at point {index}: non-finite {field}")]
    CorruptValue { index: usize, field: &'static str },
    #[error("column lengths differ: {0}")]
    LengthMismatch(String),
    #[error("label {label} at index {index} is outside [0, {num_classes}) and is not the ignore label")]
    ClassOutOfRange {
        index: usize,
        label: u16,
        num_classes: usize,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every sample carries the ignore label; loss is undefined")]
    AllIgnored,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no class is present in the confusion matrix")]
    NoPresentClass,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure is numeric (non-finite values, undefined loss) rather
    /// than a data or usage problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::AllIgnored)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_) | Error::Config(_) => 1,
            e if e.is_numeric() => 3,
            _ => 2,
        }
    }
}
