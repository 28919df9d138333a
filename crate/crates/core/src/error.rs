use std::io;

use thiserror::Error;

/// Errors produced by the search engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown operation name `{name}`; valid names: {}", valid.join(", "))]
    UnknownOperation { name: String, valid: Vec<String> },

    #[error("CTC infeasible: {frames} frames cannot emit {labels} labels ({repeats} repeated neighbours need blanks)")]
    CtcInfeasible {
        frames: usize,
        labels: usize,
        repeats: usize,
    },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    #[error("architecture count overflows u128")]
    CountOverflow,

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
