//! Foppl-von Karman plate energies on structured grids.
//!
//! The crate evaluates the discrete plate energy and its exact gradient,
//! minimizes it under clamped, supported or free boundary conditions, solves
//! the 1D buckling eigenproblem, generates the explicit displacement families
//! used as divergence witnesses, and provides the pointwise relaxation tools
//! for prestressed membranes.

// Stencil loops index several arrays at once, and `!(x > 0.0)` guards are
// meant to reject NaN as well.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod families;
pub mod grid;
pub mod material;
pub mod numeric;
pub mod relaxation;
pub mod solve;

pub use error::{Error, Result};
pub use grid::{
    BcClass, BoundarySpec, Closure, Edge, Grid, GridKind, ScalarField, Sym2Field, VectorField2,
};
pub use material::{
    coercivity_constants, eig_sym2, energy_density, energy_density_grad, EigPair, Material, Sym2,
};
