use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("self-pair ({0}, {0}) is not a valid constraint")]
    SelfPair(usize),

    #[error("index {index} out of range for {n} points")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("pair ({0}, {1}) is both must-link and cannot-link")]
    ContradictoryPair(usize, usize),

    #[error("infeasible instance: cannot-link ({0}, {1}) joins two points of the same must-link component")]
    Infeasible(usize, usize),

    #[error("constraint quotas cannot be met: {0}")]
    UnsatisfiableQuotas(String),

    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },

    #[error("{n_vars} variables exceed the dense simulation limit of {max}")]
    TooManyVariables { n_vars: usize, max: usize },

    #[error("warm start is not a feasible assignment")]
    InfeasibleWarmStart,

    #[error("no cannot-link feasible labeling could be repaired from the warm start")]
    RepairFailed,

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that mean the constraint system has no solution.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(..) | Error::ContradictoryPair(..) => true,
            Error::AtIteration { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }

    /// True for input/output and parsing failures.
    pub fn is_io_or_parse(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::EmptyDataset
                | Error::NonNumeric { .. }
                | Error::RaggedRow { .. }
                | Error::Parse { .. }
                | Error::SelfPair(_)
                | Error::IndexOutOfRange { .. }
        )
    }
}
