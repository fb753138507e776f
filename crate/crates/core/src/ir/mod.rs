//! Blueprint IR: the layer DAG every other module reads and rewrites.
//!
//! A [`Blueprint`] describes a single-input CNN with an optional classifier
//! boundary. An [`XBlueprint`] describes the cross-modal network produced by
//! the transform: one width-scaled copy of the feature extractor per
//! modality, a list of weighted cross-connections and a shared classifier.
//! Both lower to a multi-input [`Graph`], which is what shape inference,
//! parameter accounting and the engine operate on.

mod blueprint;
mod document;
mod graph;
mod layer;
mod xblueprint;
pub mod zoo;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blueprint::{extractor_insertion_points, structurally_isomorphic, Blueprint, INPUT_ID};
pub use document::{parse_blueprint, parse_xblueprint, FORMAT_VERSION};
pub use graph::{Graph, GraphInput};
pub use layer::{
    batchnorm, conv, dense, dropout, max_pool, Activation, BatchNormParams, ConvParams,
    DenseParams, DropoutParams, GlobalPoolParams, LayerKind, LayerSpec, Padding, PoolMode,
    PoolParams,
};
pub use xblueprint::{
    connection_prefix, merge_node_id, namespaced, strip_namespace, CrossConnection, XBlueprint,
    CLASSIFIER_CONCAT_ID, CLASSIFIER_NAMESPACE,
};

/// Height, width and channel count of a node output (batch axis excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape3 { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<[usize; 3]> for Shape3 {
    fn from(v: [usize; 3]) -> Self {
        Shape3::new(v[0], v[1], v[2])
    }
}

impl From<Shape3> for [usize; 3] {
    fn from(s: Shape3) -> Self {
        [s.h, s.w, s.c]
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}` references missing id `{missing}`")]
    DanglingReference { node: String, missing: String },
    #[error("graph contains a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("input `{0}` is not consumed by any node")]
    UnusedInput(String),
    #[error("output `{0}` is not a node of the graph")]
    UnknownOutput(String),
    #[error("nodes {0:?} do not feed the output")]
    Unreachable(Vec<String>),
    #[error("invalid layer `{node}`: {message}")]
    InvalidLayer { node: String, message: String },
    #[error("shape inference failed at `{node}`: {message}")]
    Shape { node: String, message: String },
    #[error("classifier boundary: {0}")]
    Boundary(String),
    #[error("no insertion points: the feature extractor has no block ends (post-conv pooling or merge nodes)")]
    NoInsertionPoints,
    #[error("modality: {0}")]
    Modality(String),
    #[error("cross-connection: {0}")]
    Connection(String),
}

pub type Result<T, E = IrError> = std::result::Result<T, E>;
