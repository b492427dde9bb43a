//! Decentralized optimization on the Stiefel manifold without retractions.
//!
//! Every agent keeps an iterate in the neighbourhood of `St(d, r)` and moves it
//! along the landing field, a sum of the relative gradient of its local
//! objective and a penalty pull toward the manifold. Gradient tracking over a
//! doubly stochastic mixing matrix makes the network agree on the minimizer of
//! the average objective. A QR-retraction baseline and centralized landing
//! are provided for comparison.

pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod manifold;
pub mod matrix_io;
pub mod merit;
pub mod network;
pub mod problems;

pub use error::{Error, Result};

/// Dense column-major `f64` matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
