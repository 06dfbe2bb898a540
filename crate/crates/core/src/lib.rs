//! Zero-shot tactile material recognition.
//!
//! A conditional VAE-GAN learns to generate tactile features from visual and
//! semantic descriptions of touched materials. Features synthesized for untouched
//! materials train a classifier for them, and a Gaussian novelty gate routes test
//! samples between the touched and untouched classifiers.

pub mod config;
pub mod data;
pub mod error;
pub mod format;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod pipeline;
pub mod trainer;
pub mod zsl;

pub use error::{Error, Result};
