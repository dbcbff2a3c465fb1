//! Noisy feedforward networks and sample-propagation estimates of the mutual
//! information between inputs and hidden layers.

pub mod cli;
pub mod clustering_metrics;
pub mod error;
pub mod gmm_entropy;
pub mod io_formats;
pub mod noisy_net;
pub mod rng;
pub mod sp_estimator;
pub mod svg;

pub use error::{Error, Result};
