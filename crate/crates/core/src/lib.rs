//! Gaussian scale mixture (GSM) restoration of images.
//!
//! The gradient of the image is modelled as a Gaussian whose precision `z(x)` is
//! a latent per-pixel variable. Integrating `z` out yields the Perona-Malik
//! energy `ψ(½|∇u|²)` with diffusivity `ψ′ = E[z | ∇u]`. On top of that model the
//! crate provides:
//!
//! - MAP estimation by EM, which coincides with lagged diffusivity ([`restore`]),
//! - an approximate mean-field scheme with a diagonal covariance relaxation,
//! - a blockwise Gibbs sampler with perturbation sampling for the Gaussian
//!   conditional ([`sampler`]),
//!
//! all driven by conjugate-gradient solves of the SPD operator
//! `Λ(ξ)u = A′Au/σ² − ∇·(ξ∇u)` ([`solver`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod operators;
pub mod priors;
pub mod restore;
pub mod sampler;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{EdgeWeightField, GradientField, ImageGrid};
pub use operators::{ForwardOperator, Kernel};
pub use priors::{PointMass, ScaleMixture, ScaleMixturePrior};
pub use solver::{CgSettings, DiffusionOperator};
