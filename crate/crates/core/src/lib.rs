//! Adjoint sensitivity analysis for method-of-lines semi-discretizations of
//! semilinear evolution equations.
//!
//! The crate is organised bottom-up:
//!
//! - [`pairings`]: duality pairings on coefficient space and adjoints of
//!   linear operators with respect to them.
//! - [`semidisc`]: P1 Galerkin and finite-difference assembly of `M q' = K q + f(t, q)`.
//! - [`adjoint`]: pairing-induced adjoint systems, variational systems, the
//!   adjoint Hamiltonian and the similarity transform between pairings.
//! - [`integrators`]: one-step methods with tangent and cotangent lifts, plus
//!   an adaptive forward Euler scheme.
//! - [`gradients`]: exact discrete gradients, finite-difference oracles and
//!   adjoint order studies.
//! - [`diagrams`]: executable checks of the commutation and conservation
//!   identities, reported as [`diagrams::DiagramReport`].
//! - [`config`]: JSON problem descriptions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod config;
pub mod diagrams;
pub mod error;
pub mod field;
pub mod gradients;
pub mod integrators;
pub mod linalg;
pub mod pairings;
pub mod semidisc;

pub use error::{Error, Result};
pub use field::{FnField, VectorField};
pub use linalg::{Matrix, Vector};
pub use pairings::{DualityPairing, PairingKind};
