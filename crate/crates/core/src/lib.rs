pub mod classifiers;
pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod seq2res;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
