//! Self-supervised remote photoplethysmography: synthetic skin-reflection
//! video, dataset I/O, view augmentation, a 3D ResNet encoder, losses and the
//! training/evaluation pipeline.

pub mod augment;
pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod signal;

pub use error::{Error, ErrorKind, Result};
