//! Deep perceptual image similarity.
//!
//! The crate turns a sequential CNN backbone into a family of image
//! dissimilarity metrics and scores them against human two-alternative
//! forced-choice (2AFC) judgments.
//!
//! A metric is computed in three stages:
//!
//! 1. **Feature extraction** ([`model`]): the backbone stored in an MRPW
//!    weight file is run on an image and the output of each block is tapped.
//!    Images may also be upscaled ×2 before the forward pass.
//! 2. **Description and normalization** ([`descriptor`]): block outputs are
//!    kept as-is (linear features) or reduced to channel Gram matrices
//!    (quadratic features), then normalized by L2, sigmoid or ReLU+L1.
//! 3. **Dissimilarity** ([`descriptor::dissimilarity`]): MSE, MAE or binary
//!    cross-entropy between two descriptors, averaged per block.
//!
//! [`pipeline`] assembles full metrics, including the multi-resolution,
//! multi-statistic preset ([`pipeline::MetricConfig::mr`]) and an SSIM
//! baseline. [`eval`] loads a 2AFC dataset and produces per-category reports.

pub mod descriptor;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod model;
pub mod mrpw;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor3;
