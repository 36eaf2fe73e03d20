use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum IopError {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("edge list contains no events")]
    EmptyGraph,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    #[error("invalid clique: nodes {0} and {1} never interact")]
    InvalidClique(NodeId, NodeId),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("value {value} out of range [0, {limit})")]
    Range { value: u64, limit: u64 },

    #[error("cannot split {0} samples into train/validation/test")]
    Split(usize),

    #[error("invalid metric input: {0}")]
    Input(String),

    #[error("metric undefined: prediction is not a permutation of the target")]
    NotPermutation,

    #[error("cannot aggregate an empty set of metric records")]
    EmptyAggregate,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("event at time {event} precedes last update {last} of node {node}")]
    TimeOrder { node: NodeId, event: i64, last: i64 },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IopError {
    /// Process exit code used by the CLI: 2 for data problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            IopError::Numeric(_) => 3,
            IopError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, IopError>;
