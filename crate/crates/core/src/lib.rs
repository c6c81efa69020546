//! Free-energy density of one-dimensional k-local quantum chains.
//!
//! The estimator walks the chain one interaction term at a time and multiplies
//! local window trace ratios
//!
//! ```text
//! n⁻¹ log Z = log d + n⁻¹ Σ_i log [ tr e^{-β(H_i^W + h_i)} / tr e^{-β H_i^W} ]
//! ```
//!
//! where `H_i^W` holds the terms `h_j` (`j < i`) that fit inside a window `W`
//! around `h_i`. Around that estimator the crate ships exact oracles (full
//! diagonalization, transfer matrices, Gibbs correlations), three constructions
//! of the term-insertion operator `A_i` (exact product, belief propagation,
//! Dyson ODE), and numerical certification of the locality bounds the
//! estimator relies on.
//!
//! Tensor basis convention: on a window `[a, b]` the basis index is
//! `Σ_j s_j d^(b-j)`, i.e. site `a` is the most significant digit.

pub mod bounds;
pub mod chain;
pub mod cli;
pub mod engine;
pub mod error;
pub mod operator;
pub mod oracle;
pub mod qbp;
pub mod quadrature;
pub mod rng;
pub mod window;

pub use error::{Error, Result};
pub use operator::{DenseOperator, Scale, Spectrum, SupportedOperator};
pub use window::{SiteSet, Window};

/// Complex scalar used throughout.
pub use faer::c64;
