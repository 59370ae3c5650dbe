//! Minimal neural-network toolkit: a tape-based autodiff [`Graph`] over
//! `f64` matrices, a [`ParamStore`], the [`Adam`] optimiser and pre-norm
//! transformer blocks.
//!
//! Everything runs single-threaded and is bit-for-bit deterministic for a
//! given seed, which the model tiers built on top of it rely on.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use layers::{causal_mask, Decoder, Encoder, Linear, TransformerConfig};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter layout: {0}")]
    Layout(String),
}
