//! Wireless radiance field built from transmitter-conditioned 3D Gaussians,
//! trained on angle-of-arrival spectra with learnable pruning masks.

pub mod error;
pub mod dataset;
pub mod deform;
pub mod geometry;
pub mod loss;
pub mod mask;
pub mod oracle;
pub mod render;
pub mod scene;
pub mod spatial;
pub mod spectrum;
pub mod train;

pub use error::{Error, Result};
