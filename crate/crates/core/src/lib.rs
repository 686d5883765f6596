//! Wavelet-modulated Gaussian splatting on the CPU.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod covariance;
mod error;
pub mod gradcheck;
pub mod imaging;
pub mod primitive;
pub mod projection;
pub mod raster;
pub mod scene;
pub mod trainer;

pub use error::{Error, EXIT_BAD_ARGS, EXIT_IO, EXIT_NUMERIC, EXIT_OK};
