//! Numerical core for audio- and pose-driven deformable Gaussian splatting.
//!
//! All math runs in `f64`. The crate is `no_std` (with `alloc`) unless the
//! `std` feature is enabled; the `parallel` feature spreads tiles and
//! Gaussians over a rayon pool while keeping every reduction in a fixed
//! order, so results are bit-identical for any thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audio;
pub mod deform;
pub mod densify;
pub mod encoder;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod perceptual;
mod par;
pub mod raster;
pub mod rng;
pub mod sh;

pub use error::{Error, Result};
pub use gaussian::{Gaussian, GaussianCloud};
