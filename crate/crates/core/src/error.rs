use std::path::PathBuf;

use thiserror::Error;

use crate::model::ValidationReport;
use crate::taskgraph::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operator graph: {0}")]
    InvalidGraph(ValidationReport),

    #[error("invalid device topology: {0}")]
    InvalidTopology(ValidationReport),

    #[error("unknown operation `{0}`")]
    UnknownOp(String),

    #[error("unknown device `{0}`")]
    UnknownDevice(String),

    #[error("invalid configuration for operation `{op}`: {reason}")]
    InvalidConfig { op: String, reason: String },

    #[error("task index {index} out of range for configuration of size {size}")]
    TaskIndexOutOfRange { index: usize, size: usize },

    #[error("region {region} is not contained in the output shape of `{op}`")]
    RegionOutOfBounds { op: String, region: String },

    #[error("no route between devices `{a}` and `{b}`")]
    NoRoute { a: String, b: String },

    #[error("task graph contains a cycle through {0}")]
    Cycle(TaskId),

    #[error("task {0} never became ready")]
    Unreachable(TaskId),

    #[error("delta simulation requires a previously simulated task graph")]
    NotSimulated,

    #[error("task {task} has non-positive or non-finite execution time {time}")]
    BadExeTime { task: TaskId, time: f64 },

    #[error("profile parse error at line {line}: {message}")]
    ProfileParse { line: usize, message: String },

    #[error("search space of ~{estimate:.3e} strategies exceeds the cap of {cap:.3e}")]
    SearchSpaceTooLarge { estimate: f64, cap: f64 },

    #[error("cached cost {cached} diverged from fresh simulation {fresh} at proposal {iteration}")]
    Diverged {
        iteration: u64,
        cached: f64,
        fresh: f64,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("{context}: {source}")]
    Chain {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn chain(self, context: impl Into<String>) -> Self {
        Error::Chain {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Whether the error stems from malformed or missing input rather than
    /// a failure of simulation or search.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidGraph(_)
            | Error::InvalidTopology(_)
            | Error::UnknownOp(_)
            | Error::UnknownDevice(_)
            | Error::InvalidConfig { .. }
            | Error::ProfileParse { .. }
            | Error::UnknownModel(_)
            | Error::Io { .. }
            | Error::Format { .. } => true,
            Error::Chain { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
