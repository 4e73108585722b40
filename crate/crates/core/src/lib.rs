pub mod basis;
pub mod channel;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod matcore;
pub mod seed;
pub mod tomography;

pub use error::{Error, Result};
