use std::fmt;
use std::io;

use thiserror::Error;

/// Shape of a tensor, used in error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Dims,
        right: Dims,
    },

    #[error("axis {axis} out of range for tensor of rank {rank} in {op}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("invalid shape {shape} for {len} elements")]
    InvalidShape { shape: Dims, len: usize },

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Dims),

    #[error("variable does not belong to this tape")]
    NotOnTape,

    #[error("backward already ran on this tape; clear and re-record first")]
    BackwardTwice,

    #[error("tape is not recording gradients")]
    NotRecording,

    #[error("index {index} out of range for length {len} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(&'static str),

    #[error("missing temporal link state at iteration {0}")]
    MissingTemporalState(usize),

    #[error("node kind mismatch: {0}")]
    NodeKind(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    #[error(
        "format version mismatch: file has version {found}, reader supports version {expected}"
    )]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: Dims(left.to_vec()),
            right: Dims(right.to_vec()),
        }
    }

    /// Short machine-readable category, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::AxisOutOfRange { .. }
            | Error::InvalidShape { .. }
            | Error::IndexOutOfRange { .. } => "dimension",
            Error::NonScalarLoss(_)
            | Error::NotOnTape
            | Error::BackwardTwice
            | Error::NotRecording => "autodiff",
            Error::InvalidLabel(_) | Error::MissingGroundTruth(_) | Error::NodeKind(_) => "data",
            Error::MissingTemporalState(_) => "state",
            Error::Config(_) | Error::UnknownVariant(_) => "config",
            Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::Malformed(_) => "format",
            Error::CheckFailed(_) => "check",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
