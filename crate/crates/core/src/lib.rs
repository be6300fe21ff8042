//! Class label distribution inference against fully connected classifiers.
//!
//! An attacker trains many shadow classifiers on datasets with known label
//! distributions, then fits a permutation-aware meta-classifier that maps
//! a classifier's parameters (plus its per-class accuracy on auxiliary
//! data) back to the label distribution it was trained on.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod meta;
pub mod nn;
pub mod par;
pub mod rng;
pub mod shadow;
pub mod simplex;

pub use error::{Error, ErrorKind, Result};
