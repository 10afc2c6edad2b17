//! Dictionary-based neural fields for 4D deforming shapes.
//!
//! The crate covers the full pipeline: shape/motion auto-decoders
//! ([`fields`]), layer-wise SVD dictionaries with residual extension
//! ([`dictionary`]), token-space diffusion with sliding-window out-painting
//! ([`diffusion`]), a synthetic mesh-sequence corpus ([`datagen`]),
//! generative metrics ([`eval`]) and stage orchestration ([`pipeline`]).

pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod diffusion;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod fields;
pub mod geometry;
pub mod nn;
pub mod pipeline;
#[cfg(test)]
mod testutil;

pub use error::{DnfError, Result};
