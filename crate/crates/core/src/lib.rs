//! Data-compatible T-matrix completion for the nonlinear inverse scattering
//! problem.
//!
//! Given sampled Green's-function operators `A` (detectors ← voxels), `B`
//! (voxels ← sources), `Γ` (voxels ← voxels) and measured scattering data
//! `Φ = A (I − VΓ)⁻¹ V B`, the solvers in this crate reconstruct a diagonal
//! interaction potential `V` by iteratively filling in the part of the
//! T-matrix that the data cannot see, while keeping the part they do see
//! fixed.
//!
//! The crate is `no_std` and needs only `alloc`. Everything that touches a
//! filesystem lives in the companion `dctmc-cli` crate.
//!
//! Module map:
//!
//! - [`operators`]: geometry, kernel sampling, exact forward solver, phantoms
//!   and noise.
//! - [`tmatrix`]: SVD cache, the T-matrix functionals, masks and the
//!   experimental T-matrix.
//! - [`solver`]: the six-step reference cycle, the streamlined engine and its
//!   building blocks.
//! - [`linear`]: linearizing data transforms, the `W` system, Richardson
//!   iteration and the cross-derivation oracles for the linear regime.

#![no_std]
// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod linear;
pub mod operators;
pub mod solver;
pub mod tmatrix;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, InversionCounter, C64};
pub use operators::{Geometry, GeometryConfig, OperatorSet, Potential};
pub use solver::{Problem, ReconstructionResult, SolverOptions, TState};
pub use tmatrix::{DataMatrix, EpsilonPolicy, RealSpace, SingularVector, SvdCache, TMatrix};
