use thiserror::Error;

use crate::numerics::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "{op}: incompatible operands node {lhs} ({lhs_shape:?}) and node {rhs} ({rhs_shape:?})"
    )]
    NodeShape {
        op: &'static str,
        lhs: NodeId,
        rhs: NodeId,
        lhs_shape: (usize, usize),
        rhs_shape: (usize, usize),
    },

    #[error("node {node}: {op} produced a non-finite value")]
    NonFinite { op: &'static str, node: NodeId },

    #[error("backward requires a 1x1 output, node {node} is {shape:?}")]
    NonScalarOutput { node: NodeId, shape: (usize, usize) },

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("non-finite function value at entry {index}")]
    NonFiniteProbe { index: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("label {label} out of range 1..={classes} at level {level}")]
    LabelRange {
        level: usize,
        label: usize,
        classes: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
