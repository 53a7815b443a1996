pub mod bench;
pub mod data;
pub mod error;
pub mod estimators;
pub mod gwas;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod recalibration;
pub mod rng;
pub mod simulators;

pub use error::{Error, ErrorKind, Result};
