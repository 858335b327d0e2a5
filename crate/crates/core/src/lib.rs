//! Delay differential equations with gamma-distributed delays, realized as
//! finite chains of ordinary differential equations.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernels`]: the gamma kernel family and a quadrature reference for
//!   kernel-weighted histories.
//! - [`systems`]: delay systems (linear, Mackey-Glass, user closures,
//!   multi-delay) and their chain realizations.
//! - [`integrate`]: fixed-step RK4, a method-of-steps delay solver and
//!   Lyapunov exponents.
//! - [`stability`]: characteristic equations, rightmost roots and Hopf points.
//! - [`analysis`]: period detection, bifurcation refinement, stroboscopic
//!   projections and the cross-correlation chaos test.
//! - [`config`]: plain-text key-value system definitions.

pub mod analysis;
pub mod config;
pub mod error;
pub mod integrate;
pub mod kernels;
pub mod stability;
pub mod systems;

pub use error::{Error, Result};
