//! Desk-scale CPU engine: NHWC tensors, a compiled node program with
//! layer-level reverse-mode differentiation, Adam training and a binary
//! parameter container.

mod adam;
pub mod container;
mod gradcheck;
mod model;
mod ops;
mod scalar;
mod tensor;
mod train;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use model::{
    ExecutableModel, ForwardOptions, Gradients, InheritStats, Mode, NodeParams, ParamMap, Program,
    Tape, BN_MOMENTUM,
};
pub use ops::softmax;
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{evaluate, predict, train, EpochStats, History, Samples, TrainConfig};

use crate::ir::IrError;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("parameter container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Combines a seed with a stream index (splitmix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the per-node stream: the global seed mixed with an FNV-1a hash
/// of the node id, so a node keeps its initialization wherever it sits.
pub fn seed_for(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix_seed(seed, h)
}
