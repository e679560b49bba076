//! Collider-aware treatment-effect estimation from images.
//!
//! The crate simulates a structural causal model in which a tumour-size
//! variable is a collider between aggressiveness and fitness, renders synthetic
//! images carrying size and texture heterogeneity, trains a small CNN whose
//! last layer doubles as a linear outcome model, and recovers the treatment
//! effect with an OLS refit on activations that have been decorrelated from
//! the collider.

pub mod checks;
pub mod error;
pub mod experiment;
pub mod image;
pub mod model;
pub mod ols;
pub mod rng;
pub mod scm;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
