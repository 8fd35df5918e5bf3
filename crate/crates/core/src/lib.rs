//! Image captioning with visual object representations grounded in the
//! caption word-embedding space.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tape`]), a
//! two-layer top-down attention LSTM decoder over projected object vectors
//! ([`model`]), a cluster (max-margin triplet) loss and a perceptual
//! (similarity-correlation) loss that tie the projected objects to the word
//! embeddings of their labels ([`losses`]), caption metrics ([`metrics`]),
//! embedding-space structure analysis ([`analysis`]) and a training harness
//! ([`train`]).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod analysis;
pub mod data;
pub mod error;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
