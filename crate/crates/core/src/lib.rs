pub mod bundle;
pub mod calibrate;
mod codec;
pub mod cohort;
pub mod ensemble;
pub mod error;
pub mod explain;
pub mod harness;
pub mod impute;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod survcore;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
