//! Derivative-informed Fourier neural operators on periodic grids.

pub mod activations;
pub mod basis;
pub mod container;
pub mod datagen;
pub mod error;
mod fft;
pub mod fno;
pub mod inverse;
pub mod jacobian;
pub mod losses;
pub mod operator;
pub mod optim;
pub mod persist;
pub mod reduction;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
