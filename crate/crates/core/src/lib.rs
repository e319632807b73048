//! Knowledge distillation by inheriting and freezing the teacher's
//! classifier, on unit-sphere embeddings, with the margin-based softmax loss
//! family (softmax, A-Softmax, CosFace, ArcFace).
//!
//! The crate is a desk-scale laboratory for embedding-space alignment between
//! a large teacher encoder and a small student:
//!
//! - [`numcore`] — dense matrices, stable reductions, Jacobi
//!   eigendecomposition, and a pinned SplitMix64 + xoshiro256** RNG, so every
//!   experiment is reproducible bit-for-bit from its seed.
//! - [`losses`] — the margin softmax family with analytic gradients and a
//!   pluggable loss interface.
//! - [`model`] — MLP encoders with L2-normalized embeddings, the class
//!   prototype matrix, and exact backprop through both normalizations.
//! - [`checkpoint`] — the `PXKD` bit-exact checkpoint format.
//! - [`optim`] — Nesterov momentum with coupled weight decay and cosine decay.
//! - [`data`] — synthetic von Mises-Fisher identity clusters, CSV ingestion,
//!   deterministic splits and batching.
//! - [`distill`] — teacher training, inherited-classifier distillation with a
//!   frozen head, the embedding-L2 baseline, a from-scratch control, and
//!   multi-teacher fusion (PCA or a trained reduction layer).
//! - [`eval`] — direction-averaged verification, TAR at a FAR target, rank-1
//!   identification with mixed extractors, and embedding geometry statistics.

pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod optim;

pub use error::{Error, Result};

/// Crate version, echoed into metrics documents.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
