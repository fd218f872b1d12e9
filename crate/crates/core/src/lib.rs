//! No-reference quality assessment for view-synthesized images, built on the
//! discriminator of a GAN context inpainter.
//!
//! Pipeline: train the inpainter on images with synthetic dis-occlusion holes
//! ([`maskgen`], [`gan`]), embed image patches with the discriminator and
//! quantize them against a bag-of-distortion-words codebook ([`codec`]), then
//! regress a quality score from the per-image word histogram ([`regressor`]).
//! [`eval`] holds the cross-validated evaluation protocol.

pub mod error;
pub mod image;
pub mod dataset;
pub mod maskgen;
pub mod nn;
pub mod container;
pub mod gan;
pub mod synthetic;
pub mod codec;
pub mod regressor;
pub mod eval;

pub use error::{Error, Result};
pub use image::ImageRGB;
