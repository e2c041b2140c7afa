//! Pseudo-spectral simulation and large-deviation diagnostics for the 3D
//! stochastic hyperdissipative Navier-Stokes equations
//!
//! ```text
//! du + A^alpha u dt + B(u, u) dt = sqrt(eps) G dW,   alpha = 5/4,
//! ```
//!
//! on the periodic torus [0, 2pi]^3.

pub mod action;
pub mod dynamics;
pub mod ergodics;
pub mod error;
pub mod forcing;
pub mod harness;
pub mod optimize;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
