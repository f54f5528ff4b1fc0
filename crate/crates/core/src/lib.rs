//! Treatment-effect estimation with partially missing confounders using the
//! missing-indicator encoding and balancing-weighted outcome regression.

pub mod cohort;
pub mod data;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod inference;
pub mod linalg;
pub mod rng;
pub mod sim;
pub mod weights;

pub use error::{Error, Result};
