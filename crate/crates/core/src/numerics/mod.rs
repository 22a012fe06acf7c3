//! Numeric core: a small reverse-mode tape, dense and convolution kernels,
//! special functions, the Beta distribution, Adam, parameter storage and
//! seeded random streams.

pub mod adam;
pub mod beta;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod special;
pub mod tape;

pub use adam::AdamState;
pub use beta::{beta_log_prob, beta_mean, beta_sample, BetaLogProb};
pub use kernels::ConvGeom;
pub use params::{ParamId, ParamStore, ParamTensor};
pub use rng::{RngStream, Stream};
pub use special::{digamma, ln_beta, relu, sigmoid, softplus};
pub use tape::{Gradients, StatsAccumulator, Tape, Var, STATS_PER_MAP};
