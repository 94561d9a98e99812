//! Calibrated quantum/electronic noise injection for grayscale radiographs,
//! plus the evaluation machinery for measuring how segmentation and
//! classification results degrade along a severity ladder.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod image;
pub mod ladder;
pub mod metrics;
pub mod noise;
pub mod poisson;
pub mod report;
pub mod rng;
pub mod validate;

pub use error::{Error, Result};
