//! Exact filtering, prediction and smoothing for dynamic probit state-space
//! models through unified skew-normal distributions, plus Monte Carlo
//! samplers, particle filters and an evaluation harness.

pub mod acceptance;
pub mod cli;
pub mod error;
pub mod eval;
pub mod filter;
pub mod gauss;
pub mod model;
pub mod rng;
pub mod sample;
pub mod samplers;
pub mod serde_mat;
pub mod smoother;
pub mod sun;

pub use error::{Error, Result};
pub use model::{BinarySeries, LatentPath, ModelSpec};
pub use sample::{Moments, SampleMatrix};
pub use sun::SunParams;
