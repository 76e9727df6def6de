use thiserror::Error;

/// Errors raised by the kernels, solvers and generators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cluster {cluster} has {members} members but rank {rank} needs at least {needed}")]
    ClusterTooSmall {
        cluster: usize,
        members: usize,
        rank: usize,
        needed: usize,
    },

    #[error("out of scope: {0}")]
    Scope(String),

    #[error("generator failed: {0}")]
    Generator(String),

    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },

    #[error("malformed {what} at line {line}: {detail}")]
    Format {
        what: &'static str,
        line: usize,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
