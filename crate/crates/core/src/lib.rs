//! Rotating vortex patches of the planar Euler equations.
//!
//! The crate builds Kirchhoff ellipses and Burbea V-states, certifies their
//! nondegeneracy through a boundary integral operator, and solves the
//! perturbed stream-function equation that smooths, splits or traps a patch.
//! [`experiment`] runs whole constructions into checksummed bundles.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod burbea;
pub mod desing;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod kirchhoff;
pub mod levelset;
pub mod nondegeneracy;
pub mod state;

pub use error::{Error, Result};
pub use grid::{symmetrize, Grid2D, Point, ScalarField, SymmetryGroup};
pub use kernels::{convolve_density_direct, eval_biot_savart, eval_newtonian_kernel, Convolver, KernelParam};
pub use state::{AdmissibleState, BaseKind, Region};
