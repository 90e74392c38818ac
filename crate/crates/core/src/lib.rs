//! Multiscale renormalization-group numerics for spinless lattice fermions on a
//! chain with periodic or Dirichlet boundaries.
//!
//! Modules, bottom up: `lattice` (grids, dispersion), `propagator` (free
//! two-point functions and their reflection split), `multiscale` (cutoffs,
//! single-scale kernels, norms), `grassmann` (finite Grassmann algebra),
//! `oracle` (exact diagonalization), `perturbation` (low-order free energy),
//! `rgflow` (running couplings and counterterm fixed points), `powercount`
//! (tree power counting) and `cli` (batch runner).

pub mod cli;
pub mod error;
pub mod grassmann;
pub mod lattice;
pub mod multiscale;
pub mod numerics;
pub mod oracle;
pub mod perturbation;
pub mod powercount;
pub mod propagator;
pub mod rgflow;

pub use error::{Error, Result};
pub use lattice::{Boundary, Filling, LatticeSpec};
