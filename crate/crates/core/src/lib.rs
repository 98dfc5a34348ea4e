//! Post-hoc, reconstruction-based out-of-distribution detection for
//! encoder-decoder monocular depth networks.
//!
//! A depth model is trained (or loaded) and frozen. An image decoder with
//! the same structure as the depth decoder is then trained to reconstruct
//! the input from the frozen encoder features. At test time the per-pixel
//! channel-max reconstruction error, averaged over the image, is the OOD
//! score: in-distribution inputs reconstruct well, OOD inputs do not.

pub mod data;
pub mod metrics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod recon;
pub mod rng;
pub mod scoring;
pub mod train;

pub use error::{Error, Result};
