//! Self-adversarial disentangling for specific domain adaptation, desk scale.
//!
//! The crate generates a two-domain synthetic segmentation benchmark, enriches
//! the source domain along a single named dimension (fog thickness or
//! field of view) with exact domainness labels, and trains a dual-encoder
//! model whose latent features are disentangled into domainness-specific and
//! domainness-invariant parts by two opposing losses. Inference keeps only the
//! invariant encoder and the task head.

pub mod cli;
pub mod discriminator;
pub mod domainness;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod sar;
pub mod seghead;
pub mod synthdata;
pub mod trainer;

pub use error::{SadError, SadResult};
