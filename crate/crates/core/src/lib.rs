//! Discontinuous Galerkin solver for elastohydrodynamic lubrication (EHL)
//! line- and point-contact problems.
//!
//! The library solves the dimensionless Reynolds equation with pressure-driven
//! cavitation handled by an exterior penalty term: the non-negativity
//! constraint on pressure is replaced by `(1/eps_p) * min(u, 0)` added to the
//! operator. The discretization is an interior-penalty DG method on structured
//! tensor meshes with a modal Legendre basis. Elastic deflection of the
//! contacting surfaces enters through a dense integral-kernel matrix coupling
//! the pressure field to the film thickness.
//!
//! Module layout:
//! - [`params`]: physical inputs and derived dimensionless groups
//! - [`mesh`]: structured interval / rectangle meshes and their faces
//! - [`dgspace`]: Legendre basis, quadrature, DG fields, broken norms
//! - [`physics`]: constitutive laws, film thickness, deformation kernel
//! - [`penalty`]: the exterior penalty operator and its continuation schedule
//! - [`assembly`]: frozen-coefficient (Picard) and Newton system assembly
//! - [`solver`]: nonlinear iteration, force balance, penalty continuation
//! - [`study`]: manufactured cases and convergence-study harness

pub mod assembly;
pub mod dgspace;
pub mod error;
pub mod mesh;
pub mod params;
pub mod penalty;
pub mod physics;
pub mod solver;
pub mod study;
pub mod util;

pub use error::{Error, Result};
