//! Bit-accurate software model of fixed-point approximate softmax
//! accelerators, with an error-analysis harness.

pub mod cli;
pub mod error;
pub mod exp_kernels;
pub mod fixed_point;
pub mod harness;
pub mod metrics;
pub mod softmax;

pub use error::{Error, ErrorClass, Result};
