//! Keyless encryption on a simulated ReRAM PUF, with the statistics used to
//! check that the cipher reads cells uniformly.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, with `*32` variants for `f32`.

pub mod attack;
pub mod cipher;
pub mod cli;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod keccak;
pub mod puf;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};

pub type PufImage = puf::PufImage<f64>;
pub type PufImage32 = puf::PufImage<f32>;
pub type PosteriorFit = stats::PosteriorFit<f64>;
pub type PosteriorFit32 = stats::PosteriorFit<f32>;
