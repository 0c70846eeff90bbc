//! Exact scenario-lattice solver for backward doubly stochastic evolution
//! systems (BDSDEs).
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! numerics: the finite probability space of binary Brownian increments,
//! coefficient systems and their assumption checkers, resolvent (Yosida)
//! machinery for monotone drifts, the backward Picard/implicit solver,
//! spectral Galerkin assembly on the unit interval, and the post-processing
//! that checks energy balances, a priori bounds, stability and convergence.
//!
//! File formats, configuration and the command line live in `bdsde-lab`.
//!
//! ```
//! use bdsde_core::lattice::ScenarioLattice;
//! use bdsde_core::models;
//! use bdsde_core::solver::{solve, SolverConfig};
//!
//! let lattice = ScenarioLattice::build(1.0, 4, 1, 1).unwrap();
//! let sys = models::martingale();
//! let sol = solve(&sys, &lattice, &SolverConfig::default()).unwrap();
//! // u_0 = E[W_T] = 0 on every B-branch
//! assert!(sol.u[0].values().iter().all(|x| x.abs() < 1e-12));
//! ```

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod coefficients;
mod error;
pub mod galerkin;
pub mod lattice;
pub mod linalg;
pub mod models;
mod par;
pub mod resolvent;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
