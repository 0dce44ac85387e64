//! Differentially private optimization with public-data-assisted mirror
//! descent.
//!
//! The public loss serves as the mirror map: for squared loss it is a fixed
//! quadratic whose Hessian reshapes both the private gradient and the privacy
//! noise. Baselines (DP-SGD with cold or warm start, DP-FedAvg) share the same
//! clipping, noise and seeding machinery so runs can be compared under a
//! common noise sequence.
//!
//! Modules:
//! - [`data`], [`loss`], [`rng`]: datasets, the squared-loss family, seeded streams.
//! - [`dp`]: clipping, Gaussian noise and noise calibration.
//! - [`mirror`]: public Hessians, quadratic mirror maps, Bregman divergence.
//! - [`optim`]: DP-SGD and the exact and first-order mirror-descent variants.
//! - [`synth`]: the sparse block-structured synthetic regression generator.
//! - [`stability`]: analytic vs. simulated noise displacement of a mirror step.
//! - [`fed`]: client partitioning, DP-FedAvg and its public-data variant.

pub mod data;
pub mod dp;
pub mod error;
pub mod fed;
pub mod loss;
pub mod mirror;
pub mod optim;
pub mod rng;
pub mod stability;
pub mod synth;

pub use data::{ModelVector, RegressionDataset, Visibility};
pub use error::{Error, Result};
pub use mirror::QuadraticMirrorMap;
pub use rng::RngStream;
