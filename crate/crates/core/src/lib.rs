//! Ball-wise local inference for functional data observed on triangulated
//! manifolds and their products.
//!
//! The pipeline: build component grids ([`mesh`], [`domain`]), evaluate a
//! pointwise statistic field ([`glm`]), run the permutation engine and adjust
//! p-values over the ball-product family ([`permute`]). [`evalsim`] wraps the
//! whole thing in a Monte Carlo harness.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod evalsim;
pub mod glm;
pub mod mesh;
pub mod permute;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
