//! Structured covariance estimation from array snapshots with missing
//! entries, via expectation-maximization, with adaptive beamforming and
//! source-number detection built on top.

pub mod em;
pub mod error;
pub mod linalg;
pub mod mstep;
pub mod scene;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
