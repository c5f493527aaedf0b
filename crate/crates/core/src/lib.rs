//! Affine weighted moment invariants (AWMIs) of grayscale images.
//!
//! The crate combines global moment integrals with local affine differential
//! invariants of the image function. Everything is organised bottom-up:
//!
//! - [`raster`]: image model, PGM/PNG ingestion, synthetic images and affine warps.
//! - [`diffops`]: Gaussian-derivative filtering and the five pointwise affine
//!   differential invariants (ADI1..ADI5).
//! - [`moments`]: geometric, central and differential moments.
//! - [`invariants`]: closed-form AMI/AWMI formulas and feature vectors.
//! - [`oracle`]: brute-force multiple sums over pixel tuples used to certify
//!   every closed form.
//! - [`retrieval`]: stability and retrieval experiments.

pub mod diffops;
mod error;
pub mod field;
pub mod invariants;
pub mod moments;
pub mod oracle;
pub mod raster;
pub mod retrieval;
pub mod sum;

pub use error::{Error, Result};
pub use field::Field;
pub use raster::{AffineParams, Raster};
