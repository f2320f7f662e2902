//! Dynamic MRI reconstruction with a low-rank plus sparse pair of untrained
//! convolutional generators, fitted by extrapolated ADMM.

pub mod error;
pub mod fft;
mod conv;
pub mod eadmm;
pub mod forward;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod prox;
pub mod render;
pub mod rng;
pub mod svd;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{CasoratiMatrix, CineVolume, Dims};
