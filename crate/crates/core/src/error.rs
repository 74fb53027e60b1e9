use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    NonNumericCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("labels are not contiguous: {0}")]
    NonContiguousLabels(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("tree has no fitted leaf counts for {0} classes")]
    UnfittedTree(usize),

    #[error("malformed tree text at line {line}: {reason}")]
    TreeFormat { line: usize, reason: String },

    #[error("trees are not related by a {0} move")]
    InconsistentMove(&'static str),

    #[error("empty sample list")]
    NoSamples,

    #[error("invalid vote matrix: {0}")]
    VoteMatrix(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad settings rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
