//! Spectral-Galerkin kernels for the stochastic Cahn-Hilliard equation
//! `du = Δ(−εΔu + f(u)/ε) dt + ε^σ dW` with Neumann boundary conditions on
//! the unit cube, `f(u) = u³ − u`.
//!
//! The crate provides the cosine eigenbasis and fractional Laplacian
//! calculus (`grid`, `field`), exact Ornstein–Uhlenbeck sampling of the
//! stochastic convolution (`noise`), exponential-Euler time integration of
//! the stochastic, deterministic and translated equations (`dynamics`),
//! sharp-interface tanh data and interface extraction (`profile`), and the
//! numerical-verification toolbox: spectral estimate, interpolation
//! inequality, a priori functional, stopping times, event probabilities and
//! rate regression (`analysis`).

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod noise;
pub mod profile;
mod transform;

pub use error::{Result, SchError};
pub use field::{NormBundle, SpectralField};
pub use grid::GridSpec;
