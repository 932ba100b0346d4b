//! Compressed-sensing image codec.
//!
//! The pipeline has three stages:
//!
//! 1. [`sampling`]: a learnable local structural sampling operator measures
//!    every `B x B` block with `n_B` non-negative, sum-to-one filters that
//!    each see one `L x L` window.
//! 2. [`measurement`]: per-block vectors are tiled into a 2-D plane and
//!    compressed by a pluggable image codec (raw 8-bit, JPEG 2000, BPG, or a
//!    DPCM baseline) inside a `CSC1` container.
//! 3. [`reconstruction`]: a Laplacian-pyramid network maps the decoded
//!    plane back to an image.
//!
//! [`training`] optimizes the sampling weights and the network end to end;
//! [`eval`] and [`metrics`] provide the rate-distortion harness.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod image;
pub mod measurement;
pub mod metrics;
pub mod nn;
pub mod reconstruction;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
pub use image::GrayImage;
