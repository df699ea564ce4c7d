pub mod buffer;
pub mod case_study;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod envs;
pub mod experiment;
mod error;
pub mod metrics;
pub mod motivating;
pub mod norm;
pub mod repr;
pub mod rng;
pub mod sac;
pub mod signals;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
