//! Causal attention, the standard and disentangled attention-only
//! transformers, the exact maps between them, and hand-written backprop.

pub mod attention;
pub mod checkpoint;
pub mod disentangled;
pub mod equivalence;
pub mod standard;
pub mod train;

pub use attention::{causal_attention, causal_pattern, causal_softmax};
pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, Checkpoint, CheckpointHeader};
pub use disentangled::{dimension_ladder, DisentangledGrads, DisentangledParams, ForwardTrace, OutputMode};
pub use equivalence::{disentangle, entangle};
pub use standard::{Head, StandardParams};
pub use train::{
    batch_ce_grads, last_token_ce, position_block, position_pattern, train_disentangled_joint, JointConfig, JointRun,
};
