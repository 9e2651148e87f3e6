//! Spectral simulation of a noisy doubly unstable Kuramoto–Sivashinsky
//! equation with a 1:3 resonance, its coupled stochastic Landau amplitude
//! system, and the Monte-Carlo checks that compare the two.
//!
//! Module map:
//! - [`spectrum`]: Hermitian Fourier fields, the linear symbol, convolution, norms.
//! - [`noise`]: keyed Wiener/OU lattices for the stochastic part `Z`.
//! - [`duks`]: exponential-Euler solver for the regular part `v`.
//! - [`landau`]: amplitude equations, slaved modes, ansatz reconstruction.
//! - [`validate`]: error metrics, ε-scaling, residual orders, OU statistics.
//! - [`cli`]: configuration, subcommands and artifact emission.

pub mod cli;
pub mod duks;
pub mod error;
pub mod landau;
pub mod noise;
pub mod spectrum;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
