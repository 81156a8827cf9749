//! Memory-efficient Gaussian splatting with spherical-Gaussian color.
//!
//! The crate is organized bottom-up:
//!
//! - [`scene`]: primitives, PLY ingestion, the MEGS2 compact format and budget accounting.
//! - [`sg`]: spherical-Gaussian and spherical-harmonics color math.
//! - [`fit`]: per-primitive SH to SG conversion.
//! - [`render`]: CPU projection, alpha blending, analytic backward pass and losses.
//! - [`prune`]: memory-constrained joint sparsification of opacity and sharpness.
//! - [`postprocess`]: hard removal, lobe compensation, fine-tuning and memory estimates.
//! - [`toy`]: procedural scenes used for desk-scale end-to-end runs.

pub mod error;
pub mod fit;
pub mod image;
pub mod postprocess;
pub mod prune;
pub mod render;
pub mod scene;
pub mod sg;
pub mod sphere;
pub mod toy;

pub use error::{Error, Result};
