//! Simulation of metasurface-encoded hyperspectral imaging: coupled-mode
//! filter physics, PCA projector design, barcode encoding and readout,
//! reconstruction, inverse design and evaluation metrics.

mod binio;

pub mod bench;
pub mod cmt;
pub mod error;
pub mod fitting;
pub mod metrics;
pub mod nn;
pub mod projector;
pub mod readout;
pub mod spectra;

pub use error::{Error, Result};
