//! Finite-volume simulation engine for non-isothermal reactive transport
//! with an evolving fluid–mineral interface.
//!
//! The interface between fluid and mineral is represented by a phase field
//! `phi` (1 in the fluid, 0 in the mineral) governed by a conservative
//! Allen-Cahn equation. Solute concentration and temperature are transported
//! by diffusion/conduction with phase-dependent coefficients. The crate
//! provides:
//!
//! - [`mesh`]: uniform rectangular cell-centered grids and two-point flux
//!   diffusion operators,
//! - [`chemistry`]: pointwise closures (double-well potential, reaction
//!   rates, the phase-field nonlinearity and its stabilization bound),
//! - [`allen_cahn`]: Newton and element-wise split L-scheme solvers for the
//!   original and conservative Allen-Cahn equations,
//! - [`transport`]: implicit linear solves for solute and heat,
//! - [`coupling`]: the per-time-step iterative coupling driver,
//! - [`diagnostics`]: conservation audits and iteration bookkeeping.

pub mod allen_cahn;
pub mod chemistry;
pub mod coupling;
pub mod diagnostics;
pub mod linalg;
pub mod mesh;
pub mod transport;

pub use chemistry::{ModelParams, ReactionRate};
pub use coupling::{SimState, SolverConfig};
pub use mesh::{BoundaryCondition, Field, FieldBc, Mesh};
