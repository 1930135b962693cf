//! Numerical laboratory for the planar circular restricted three-body
//! problem: weak-stability classification about the heavier primary,
//! Lyapunov orbits about L1 and their globalized invariant manifolds, and
//! the cross-check that the weak stability boundary coincides with the
//! stable-manifold cuts at matching energies.
//!
//! The crate is organized bottom-up:
//!
//! - [`dynamics`]: equations of motion, energy, coordinate transforms
//! - [`equilibria`]: Lagrange points, Euler's quintic, the L1 spectrum
//! - [`propagation`]: adaptive integration with event detection
//! - [`lyapunov`]: the planar periodic-orbit family about L1
//! - [`block`]: isolating-block geometry and transit classification
//! - [`manifolds`]: manifold globalization and section cuts
//! - [`wsb`]: weak n-stability, boundary refinement, and the comparison
//!   between boundary points and manifold cuts
//!
//! See the crate examples for one runnable program per capability, and the
//! `wsb-lab` binary for the batch command-line front end.

pub mod block;
pub mod config;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod export;
pub mod integrator;
pub mod lyapunov;
pub mod manifolds;
pub mod propagation;
pub mod wsb;

pub use error::{Error, Result};
