//! Hierarchical regularization for metric learning in hyperbolic space.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: Poincaré-ball primitives (exponential map, Möbius addition,
//!   distance) in double precision, plus their differentiable counterparts.
//! - [`autodiff`]: a small reverse-mode tape over dense row-major tensors.
//! - [`mining`]: exact k-nearest neighbors, reciprocal neighbors and triplet
//!   construction.
//! - [`hierloss`]: hierarchical proxies, LCA sampling and the hierarchical
//!   triplet loss.
//! - [`mlloss`]: spherical metric-learning losses (Proxy-Anchor, Multi-Similarity).
//! - [`model`]: the MLP encoder with its spherical and hyperbolic heads.
//! - [`data`]: synthetic hierarchies and the binary feature file format.
//! - [`train`]: AdamW, checkpoints and the training loop.
//! - [`eval`]: Recall@k, Dasgupta cost, tree extraction and affinity matrices.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod hierloss;
pub mod mining;
pub mod mlloss;
pub mod model;
pub mod train;

pub use error::{Error, Result};
