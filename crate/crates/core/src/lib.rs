//! Zero-shot data-to-text generation: template realization, pointer-network
//! fact ordering, sentence aggregation and paragraph compression, plus the
//! synthetic corpus builder and the evaluation harness used to train and
//! score those modules.

pub mod aggregation;
pub mod backend;
pub mod cli;
pub mod compression;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod facts;
pub mod ordering;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
