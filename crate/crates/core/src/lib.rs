//! Nonparametric deconvolution models.
//!
//! Observations are averages over many unobserved particles, each belonging to
//! one of an unknown number of latent factors. This crate simulates such data,
//! fits parametric and nonparametric deconvolution models by black-box
//! variational inference with split/merge moves, and scores recovered global
//! and local factors against ground truth.

pub mod dist;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod np;
pub mod rng;
pub mod simgen;
mod serde_util;
pub mod vi;

pub use error::{Error, Result};
