//! Perceptually optimized HDR tone mapping.
//!
//! The pipeline decomposes a calibrated luminance map into a normalized
//! Laplacian pyramid, predicts the Laplacian pyramid of a display image with
//! two small bias-free context-aggregation networks, and collapses the
//! prediction into the display luminance range. The networks are trained
//! end to end against the normalized Laplacian pyramid distance (NLPD).
//!
//! Modules, bottom up:
//!
//! - [`hdrimg`]: HDR image I/O, luminance, calibration, display encoding
//! - [`pyramid`]: Laplacian and normalized Laplacian pyramids
//! - [`nlpd`]: the NLPD metric and its analytic gradient
//! - [`gradkern`]: reverse-mode kernels for the networks
//! - [`cantmo`]: the two-network tone mapper
//! - [`reftmo`]: reference operators and the image-space NLPD optimizer
//! - [`trainer`]: data handling, augmentation, Adam and the training loop
//! - [`cli`]: the `nlpd-tmo` command line

pub mod cantmo;
pub mod cli;
pub mod error;
pub mod gradkern;
pub mod hdrimg;
pub mod nlpd;
pub mod plane;
pub mod pyramid;
pub mod reftmo;
pub mod trainer;

pub use error::{Error, Result};
pub use plane::Plane;
