//! Numerical toolkit for dispersive estimates of two-dimensional Schrödinger
//! operators `H = −Δ + V`: free-resolvent kernels, the low-energy expansion of
//! `(U + vR₀v)⁻¹`, zero-energy regularity, Born series and spectral propagators.

pub mod discretize;
pub mod error;
pub mod linalg;
pub mod lowenergy;
pub mod oscint;
pub mod potential;
pub mod propagator;
pub mod run;
pub mod specfun;

pub use error::{Error, Result};
pub use specfun::Sign;
