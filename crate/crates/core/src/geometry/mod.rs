//! Pinhole cameras and projectors, pattern sampling, and ray sampling.

pub mod camera;
pub mod pattern;
pub mod projector;
pub mod sampling;

pub use camera::{project_point, Camera, PinholeIntrinsics, Pose, Projection, Ray};
pub use pattern::PatternImage;
pub use projector::ProjectorModel;
pub use sampling::{sample_hierarchical, sample_stratified};
