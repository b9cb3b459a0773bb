//! Bayesian factor analysis with clustered loading rows.
//!
//! Variables sharing a cluster share a loading row, so redundant variables are
//! detected while the covariance is estimated. See [`fit`] for the high-level entry
//! points and [`sampler`] for the chain itself.

pub mod error;
pub mod fit;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod select;
pub mod synth;

pub use error::{Error, Result};
