//! Two-layer attention-only transformers on random sequences with latent
//! causal structure.

pub mod construct;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod markov;
pub mod oracle;
pub mod reduced;
pub mod rng;
pub mod sequence;
pub mod transformer;

pub use error::{Error, Result};
