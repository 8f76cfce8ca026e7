//! Minimization, linear solves and eigen-analysis built on the discrete energy.

mod buckling;
mod eigen;
mod linear;
mod minimize;
mod palais_smale;

pub use buckling::{
    buckling_critical, critical_thickness_compression, critical_thickness_shear, pencil_modes,
    BucklingBc, BucklingMode,
};
pub use eigen::{compression_threshold, poincare_constant};
pub use linear::{
    membrane_correction, min_inplane, solve_inplane, InplaneMinimum, InplaneSolution,
};
pub use minimize::{
    flat_with_noise, minimize, minimize_functional, SolveOptions, SolveReport, Unknowns,
};
pub use palais_smale::{uniform_ps_check, PsEntry};
