use nalgebra::Vector3;

use super::camera::{project_point, PinholeIntrinsics, Pose};
use super::pattern::PatternImage;
use crate::error::{Error, Result};

/// A calibrated pattern projector: intrinsics, world pose, and the pattern
/// it projects.
#[derive(Debug, Clone)]
pub struct ProjectorModel {
    pub intrinsics: PinholeIntrinsics,
    pub pose: Pose,
    pub pattern: PatternImage,
}

impl ProjectorModel {
    pub fn new(intrinsics: PinholeIntrinsics, pose: Pose, pattern: PatternImage) -> Result<Self> {
        intrinsics.validate()?;
        pose.validate()?;
        if pattern.width != intrinsics.width || pattern.height != intrinsics.height {
            return Err(Error::InvalidArgument(format!(
                "pattern {}x{} does not match projector intrinsics {}x{}",
                pattern.width, pattern.height, intrinsics.width, intrinsics.height
            )));
        }
        Ok(ProjectorModel {
            intrinsics,
            pose,
            pattern,
        })
    }

    /// Pattern color this projector casts onto a world point: reproject,
    /// then bilinear-sample the pattern. Points behind the projector get
    /// black; out-of-frustum lookups return the pattern's border color.
    pub fn cast_color(&self, p_world: &Vector3<f64>) -> [f64; 3] {
        let proj = project_point(&self.intrinsics, &self.pose, p_world);
        if proj.behind() {
            return [0.0; 3];
        }
        self.pattern.bilinear_sample(proj.u, proj.v)
    }
}
