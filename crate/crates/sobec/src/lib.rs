//! Ground states of two-component spin-orbit coupled Bose-Einstein
//! condensates by energy minimization on the unit-mass manifold.
//!
//! The crate discretizes the coupled Gross-Pitaevskii energy with P1/P2
//! Lagrange finite elements on a uniform triangulation of a rectangle and
//! finds minimizers with two nonlinear inverse iterations:
//!
//! - the damped A-method, a globally convergent Riemannian gradient descent
//!   in the energy-adaptive metric (one coercive solve per step), and
//! - the shifted J-method, a locally fast inverse iteration with the Jacobian
//!   of the scaling-invariant operator, solved through a sparse LU of the
//!   shifted symmetric part plus a rank-two Woodbury correction.
//!
//! Spectral diagnostics (tangent-space Hessian eigenvalues, the spectral gap
//! of the Jacobian around the target eigenvalue) verify the expected local
//! convergence rates. The `pipeline` module chains method stages (P1 -> P2,
//! A -> J) from a TOML configuration; the `sobec` binary drives it.

pub mod a_method;
pub mod assembly;
pub mod config;
pub mod error;
pub mod j_method;
pub mod linsolve;
pub mod mesh;
pub mod pipeline;
pub mod quad;
pub mod sparse;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
