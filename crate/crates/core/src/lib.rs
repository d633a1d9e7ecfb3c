//! Training and evaluation of deep latent-variable generative models whose
//! approximate posterior over the latent code is a full-covariance Gaussian
//! obtained by a Laplace approximation at an iteratively refined posterior
//! mode.
//!
//! Rectifier decoders are piecewise linear, so within an activation region
//! the generative model is exactly a linear Gaussian model; the [`laplace`]
//! module exploits this to make closed-form mode updates and to read the
//! posterior covariance directly off the local linearization. The [`ppca`]
//! module provides the matching closed-form linear model, which doubles as
//! the correctness oracle for the iterative path. Amortized ([`models`]
//! `vae`) and gradient-refinement (`savae`) baselines share the same network
//! and evaluation machinery.

pub mod data;
pub mod error;
pub mod laplace;
pub mod linalg;
pub mod models;
pub mod network;
pub mod ppca;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector, Rng};
