//! Map-guided few-shot room impulse response prediction.
//!
//! The crate bundles a shoebox acoustic simulator that supplies ground truth,
//! a small reverse-mode autodiff engine, the top-down feature mapping and
//! network that predict binaural RIR spectrograms for unseen speaker/listener
//! poses, and the dataset / training / evaluation pipeline around them.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod mapping;
pub mod model;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
