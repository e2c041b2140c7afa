//! Fourier representation of divergence-free periodic vector fields.

mod field;
mod grid;
mod nonlinear;

pub use field::{SpectralField, Vec3c};
pub use grid::{make_grid, TorusGrid};
pub use nonlinear::{bilinear, convective, linearized_adjoint, max_speed, nonlinear_term, trilinear};
