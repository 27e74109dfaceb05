//! Masked-autoencoder pretraining for 1D spectra.

pub mod attribution;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod model;
pub mod patch_mask;
pub mod rng;
pub mod spectra_io;
pub mod svg;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
