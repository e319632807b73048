//! Numerical substrate: dense matrices, stable reductions, symmetric
//! eigendecomposition, and the pinned deterministic RNG.

pub mod eig;
pub mod matrix;
pub mod rng;
pub mod stable;

pub use eig::sym_eig;
pub use matrix::{dot, norm2, Matrix};
pub use rng::{child_seed, Rng, SplitMix64};
pub use stable::{logsumexp, softplus};
