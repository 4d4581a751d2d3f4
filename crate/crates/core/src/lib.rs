//! Level-set Monte Carlo for the microcanonical configurational entropy of
//! lattice potentials.
//!
//! The crate samples equipotential hypersurfaces Σ_v = V⁻¹(v) with the
//! invariant measure dσ/‖∇V‖, estimates the first four derivatives of the
//! entropy S_N(v̄) = (1/N) log Ω(N v̄) as signed cumulant combinations of
//! pointwise integrands, enumerates critical points of V with their Morse
//! indexes, and checks the sum-function moment scalings those estimates rely
//! on.
//!
//! Modules map onto the pipeline:
//!
//! * [`model`]: potentials and exact derivatives.
//! * [`geometry`]: pointwise integrands α, P, W, Q.
//! * [`sampler`]: thin-shell Markov chains on level sets.
//! * [`entropy`]: derivative estimators, brute-force density of states,
//!   Legendre and Helmholtz transforms.
//! * [`critical`]: critical points, Morse indexes, topology reports.
//! * [`moments`]: sum-function moment scaling and ratio-average checks.
//! * [`cli`]: configuration parsing and the experiment runner.

// `!(a > b)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod critical;
pub mod entropy;
pub mod error;
pub mod geometry;
pub mod model;
pub mod moments;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Boundary, Configuration, LatticeTopology, ModelKind, PotentialModel};
