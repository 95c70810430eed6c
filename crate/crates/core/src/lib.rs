//! Statistical ensembles under iteration maps of integrable twist Hamiltonians.
//!
//! The crate simulates clouds of initial conditions `(I, θ)` evolving under
//! `θ ↦ θ + jω(I) (+ c·X_j)`, and evaluates the same ensemble statistics with a
//! Fourier-mode spectral oracle so that every Monte Carlo estimate has an
//! independent semi-analytic reference.

pub mod dynamics;
pub mod error;
pub mod phase;
pub mod sampling;
pub mod special;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
