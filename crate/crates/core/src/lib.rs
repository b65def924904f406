//! Emulation of MXFP4 training arithmetic: FP4 grids, MX block quantizers,
//! random Hadamard transforms, quantized GEMMs and the studies built on them.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod matrix;
pub mod mx;
pub mod qgemm;
pub mod rht;
pub mod rng;
mod selftest;
pub mod tensor;
pub mod train;
pub mod variancelab;

pub use error::{Error, Result};
pub use matrix::Matrix;
