//! Sparse mixture models on the torus `T^d = [0,1)^d`.
//!
//! Each mixture component depends on a small set of coordinates `u` through a
//! wrapped normal, diagonal wrapped normal or von Mises product density and is
//! uniform on the others. Models are learned from weighted samples by an EM
//! iteration coupled with an exact `ℓ0` proximal step on the weight simplex,
//! and coupling sets are grown by a Kolmogorov–Smirnov driven heuristic.

pub mod em;
pub mod eval;
pub mod error;
pub mod experiments;
pub mod mixture;
pub mod rng;
pub mod selection;
pub mod sparsity;
pub mod torus;

pub use error::{Error, Result};
pub use mixture::{ComponentParams, Family, IndexSet, SparseMixture, WeightedSampleBatch};
