//! Online identification of sparse, time-varying nonlinear causal topologies
//! from multivariate time series.
//!
//! Each node is modeled as an additive nonlinear autoregression on the lagged
//! samples of every node. Nonlinear dependencies are represented with random
//! Fourier features of a Gaussian kernel, and the coefficients are learned
//! online by composite mirror descent with a group-lasso penalty, so absent
//! edges are exact zeros and every step costs the same regardless of `t`.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the common double-precision case.

pub mod bench;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod rff;
pub mod scalar;
pub mod seed;
pub mod series;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GaussianKernel64 = rff::GaussianKernel<f64>;
pub type RffMap64 = rff::RffMap<f64>;
pub type FeatureMaps64 = rff::FeatureMaps<f64>;
pub type TimeSeries64 = series::TimeSeries<f64>;
pub type Topology64 = synth::Topology<f64>;
pub type CoefficientState64 = estimator::CoefficientState<f64>;
pub type RfEstimator64 = estimator::RfEstimator<f64>;
pub type LinearBaseline64 = estimator::LinearBaseline<f64>;
pub type PseudoAdjacency64 = metrics::PseudoAdjacency<f64>;

pub type RfEstimator32 = estimator::RfEstimator<f32>;
pub type TimeSeries32 = series::TimeSeries<f32>;
