//! Respiratory-sound screening pipeline.

pub mod audio_features;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod gbdt;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod seeds;
pub mod selection;

pub use error::{Error, Result};
