//! Training pipeline, file formats and command-line plumbing around
//! `talksplat-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gsaf;
pub mod image_io;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
