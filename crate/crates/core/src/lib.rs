//! Fixed-step gradient descent for two-layer deep inverse prior networks,
//! together with the quantities that certify its convergence: the
//! initialization test `R' < R`, the descent inequality, the KL loss-rate
//! envelope, parameter and signal recovery bounds, the early-stopping
//! iteration and the overparametrization bound.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] dense matrices, Jacobi SVD / eigensolvers, conic singular values
//! * [`losses`] loss models with their desingularizing functions
//! * [`network`] the generator `x = V φ(W u) / √k` and its Jacobian
//! * [`operators`] forward operators and noisy problem instances
//! * [`trainer`] the gradient-descent loop and step-size estimation
//! * [`certificates`] certificate constants, radii and bound envelopes
//! * [`experiments`] seeded Monte-Carlo grids and the deblurring pipeline

pub mod certificates;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod losses;
pub mod network;
pub mod operators;
pub mod pgm;
pub mod quadrature;
pub mod report;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
