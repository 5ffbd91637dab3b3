//! Equilibria, first- and second-order flows, and Ollivier-Ricci curvature for
//! stochastic monotone inclusions whose data distribution depends on the
//! decision variable.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: vectors, RK4, quadrature, root bracketing, rate fits.
//! - [`distmap`]: distributions, exact W1 distances, decision maps.
//! - [`operators`]: monotone oracles, random fields, closed-loop problems.
//! - [`equilibrium`]: repeated minimization towards the equilibrium point.
//! - [`flow1`]: the first-order closed-loop flow and its envelopes.
//! - [`flow2`]: inertial dynamics with Hessian-driven damping.
//! - [`curvature`]: finite random walk spaces and coarse Ricci curvature.
//! - [`primaldual`]: the saddle-point application.
//! - [`scenario`]: JSON scenario configs, runner and reports (used by the CLI).

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod distmap;
pub mod equilibrium;
mod error;
pub mod flow1;
pub mod flow2;
pub mod numerics;
pub mod operators;
pub mod primaldual;
pub mod scenario;
pub mod trajectory;

pub use error::{Error, Result};
pub use numerics::Vector;
