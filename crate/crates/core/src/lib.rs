//! Least-energy states of competitively coupled elliptic systems whose
//! self-interaction is focused by a sign-changing core weight: +1 inside a
//! shrinking attraction ball, -1 outside. Solutions are found by a Nehari
//! manifold reduction (scale every component onto the natural constraint)
//! combined with Sobolev-gradient descent on a product of spheres.
//!
//! Module map:
//! - [`model`]: parameters, problem kinds, weight, validation
//! - [`grid`]: uniform Dirichlet box grid, stencils, quadrature, CG solves
//! - [`energy`]: functional, gradients, Nehari coefficients and projection
//! - [`solver`]: bump initialization and Riemannian descent
//! - [`radial`]: independent 1D solver for the radial limit equation
//! - [`study`]: rescalings, sweeps, concentration/segregation diagnostics
//! - [`config`]: run-configuration text format
//! - [`report`]: CSV/manifest/field-dump serialization
//! - [`checks`]: named invariant checks used by the CLI

pub mod energy;
pub mod grid;
pub mod model;
pub mod radial;
pub mod solver;
pub mod study;
