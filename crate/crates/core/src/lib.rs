//! Numerical Friedrichs–Faddeev model.
//!
//! `H₀` is multiplication by the energy on `L²([a, b]; ℂᵈ)` and `V` an integral
//! operator with a Hermitian, boundary-vanishing kernel. The crate discretizes
//! the pair with a Nyström scheme and computes the off-shell T-kernel, the
//! scattering matrix, the stationary wave operators and the rescaled
//! `tanh(πD/2)` decomposition of `W₋`.

pub mod cauchy;
pub mod config;
pub mod error;
pub mod export;
pub mod fredholm;
pub mod grid;
pub mod interp;
pub mod kernel;
pub mod linalg;
pub mod run;
pub mod scattering;
pub mod spectral;
pub mod wave;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
