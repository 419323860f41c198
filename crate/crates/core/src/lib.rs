//! Gradient-domain reconstruction of ground reflectivity maps from
//! multi-laser scan data.
//!
//! Measurements are binned into per-perspective maps ([`perspectives`]),
//! differentiated ([`gradients`]), fused with sparse weight selection and
//! optional soft-threshold denoising ([`fusion`]), and integrated back into a
//! reflectivity map by a Dirichlet-constrained Poisson solve
//! ([`reconstruct`]). [`localize`], [`segment`] and [`simulate`] cover the
//! downstream uses and the synthetic test bench.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the pipeline
//! and the CLI live in the `reflectmap` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod fusion;
pub mod gradients;
pub mod grid;
pub mod localize;
pub mod perspectives;
pub mod reconstruct;
pub mod segment;
pub mod simulate;
mod sum;

pub use error::{Error, Result};
pub use fusion::{FusionConfig, WeightVector};
pub use gradients::GradientField;
pub use grid::{CellMap, GridSpec, OccupancySet};
pub use localize::{Pose, SearchWindow};
pub use perspectives::{Measurement, PerspectiveKey, PerspectiveSet};
pub use reconstruct::{BoundaryCondition, Descent, ReconstructionConfig};
pub use sum::NeumaierSum;
