//! Channel-adaptive early exiting for multivariate time series classification.
//!
//! A reinforcement-learning policy decides, at a fixed number of checkpoints
//! along each series, how many channel groups to keep observing and whether
//! to stop, trading classification accuracy against input savings.

pub mod data;
pub mod episode;
pub mod evaluation;
pub mod error;
pub mod models;
pub mod numerics;
pub mod ranking;
pub mod training;

pub use error::{Error, Result};
