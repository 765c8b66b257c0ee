//! Solitary waves of the generalized KdV equation
//!
//! ```text
//! u_t + (u_xx - λ u + a(εx) u^m)_x = 0,   m ∈ {2, 3, 4}
//! ```
//!
//! in a slowly varying medium `a`. The crate covers the exact soliton family
//! and its linearized operator, the adiabatic modulation ODE for the scaling
//! and position, the shelf correction that sits behind the soliton, a Fourier
//! ETDRK4 solver for the full equation, and post-processing of simulated
//! fields (modulation fits, shelf and mass budgets, monotonicity functionals).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adiabatic;
pub mod analysis;
pub mod cli;
pub mod commands;
pub mod config;
pub mod correction;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod pde;
pub mod potential;
pub mod soliton;

pub use error::{Error, Result};
pub use grid::Grid1D;
pub use potential::PotentialSpec;

pub use soliton::ModelConstants;

/// Version string embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
