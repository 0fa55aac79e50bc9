//! Hierarchically compositional kernels.
//!
//! A positive-definite approximation of a base kernel built on a random
//! projection partitioning tree: exact inside each leaf, Nyström-compressed
//! between siblings with bases nested across levels. Its Gram matrix is a
//! recursively low-rank compressed matrix, so storage is `O(nr)` and
//! training is `O(nr²)`.
//!
//! Modules:
//!
//! | module | contents |
//! |--------|----------|
//! | [`kernels`] | base kernels, jitter, cross-Gram evaluation |
//! | [`partition`] | random projection tree and landmark sampling |
//! | [`hmatrix`] | compressed factors, matvec, inversion, out-of-sample products |
//! | [`reference`] | dense oracles for the hierarchical kernel |
//! | [`baselines`] | Nyström, random Fourier features, block-independent kernel |
//! | [`learner`] | kernel ridge regression and one-vs-all classification |
//! | [`kpca`] | kernel PCA embeddings and alignment difference |
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
mod error;
pub mod hmatrix;
pub mod kernels;
pub mod kpca;
pub mod learner;
pub mod linalg;
pub mod partition;
mod points;
pub mod reference;

pub use error::{Error, Result};
pub use hmatrix::{HierFactors, OosState};
pub use kernels::{KernelFamily, KernelSpec};
pub use learner::{FitOptions, Method, Model, Sizing, Task};
pub use partition::PartitionTree;
pub use points::PointSet;

/// Largest `n` for which the dense helpers (materialization, oracles,
/// dense GP posterior) will allocate an `n × n` matrix.
pub const DENSE_CAP: usize = 4096;
