//! Desk-scale laboratory for data-free cross-modal knowledge distillation.
//!
//! Two frozen single-modality classifiers (photo and sketch teachers) are
//! inverted by a pair of estimator networks; the class-aligned reconstructions
//! train a photo encoder and a sketch encoder into a shared metric space for
//! sketch-based retrieval, without touching any original training data.

pub mod baselines;
pub mod distill;
pub mod error;
pub mod losses;
pub mod models;
pub mod nn;
pub mod retrieval;
pub mod seed;
pub mod synthmod;

pub use error::{Error, Result};
