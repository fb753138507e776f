//! Cross-modal topology compiler.
//!
//! Turns a CNN blueprint plus labeled multimodal data into a cross-modal CNN
//! (one width-scaled super-layer per modality, weighted cross-connections
//! between them, a shared classifier), optionally refining the connection
//! weights over generations of combined learning. All measurements run on
//! the built-in desk-scale [`engine`].

pub mod data;
pub mod engine;
pub mod harness;
pub mod ir;
pub mod iterative;
pub mod xtransform;
