//! Propagation of Gaussian input uncertainty through trained feedforward
//! networks.
//!
//! The central method builds a Gaussian factor graph over sampled input
//! nodes and the target layer, solves it as a nonlinear least-squares
//! problem and reads the output covariance off the information matrix.
//! Extended-Kalman, unscented and Monte-Carlo propagation are provided for
//! comparison, together with the 2-Wasserstein metric and Friedman/Nemenyi
//! rank statistics used to score them.

pub mod corruption;
pub mod dataset;
pub mod error;
mod format;
pub mod function;
pub mod gaussian;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod propagate;

pub use dataset::{Dataset, RegressionSample};
pub use error::{Error, Result};
pub use gaussian::Gaussian;
pub use net::{LayerId, LayerKind, Network, NetworkBuilder};
