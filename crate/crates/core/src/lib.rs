//! GhostForge: a desk-scale toolkit for single-pixel correlation imaging.
//!
//! The pipeline simulates bucket-detector measurements of an object under a
//! sequence of random illumination patterns, reconstructs the object with
//! differential correlation imaging, and cleans the reconstruction up with a
//! small trainable encoder/decoder network plus classical baselines.
//!
//! Crate layout:
//!
//! - [`tensor`] — n-dimensional tensors with tape-based reverse-mode
//!   differentiation (exactly the layer set the network needs).
//! - [`optics`] — pattern generation and the two-arm bucket measurement model.
//! - [`recon`] — differential and traditional correlation reconstruction.
//! - [`filters`] — bilateral filter baseline.
//! - [`metrics`] — MSE / PSNR / SSIM image quality scores.
//! - [`unet`] — the denoising network: construction, training, inference.
//! - [`dataset`] — image ingestion and (noisy, clean) pair generation.
//! - [`gftn`] — the binary tensor container used by checkpoints and caches.
//!
//! Everything is deterministic: all randomness flows from explicit seeds
//! through counter-mode ChaCha streams, and internal parallelism never changes
//! a single bit of any result.

// Validation guards spell failure as `!(x > 0.0)` on purpose: the negated
// form is also true for NaN, so NaN inputs fail the check instead of slipping
// through a direct `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod filters;
pub mod gftn;
pub mod grid;
pub mod metrics;
pub mod optics;
pub mod recon;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use grid::ImageGrid;
