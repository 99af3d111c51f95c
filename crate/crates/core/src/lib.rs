//! Neural signed distance field reconstruction from images lit by
//! calibrated pattern projectors.
//!
//! The engine couples a NeuS-style volumetric SDF renderer with per-point
//! pattern reprojection: every 3D sample along a camera ray is projected
//! back into each projector's pattern image and the sampled pattern color
//! is blended with the learned diffuse color before compositing. Training
//! against captured (or synthesized) images recovers shape, appearance,
//! and the illumination blend coefficients.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod fields;
pub mod geometry;
pub mod imageio;
pub mod kernels;
pub mod loss;
pub mod render;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
