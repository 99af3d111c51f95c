use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Symmetric intrinsics from a horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_deg: f64) -> Self {
        let f = width as f64 / (2.0 * (fov_deg.to_radians() / 2.0).tan());
        PinholeIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// Rigid transform taking world coordinates into device coordinates:
/// x_dev = R·x_world + t. Units are meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let pose = Pose { r, t };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.r.transpose() * self.r;
        let dev = (rtr - Matrix3::identity()).abs().max();
        if dev > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation not orthonormal (max |RᵀR - I| = {dev:.3e})"
            )));
        }
        let det = self.r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant {det} != +1"
            )));
        }
        Ok(())
    }

    /// Device origin expressed in world coordinates: −Rᵀt.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn to_device(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.r * p_world + self.t
    }

    pub fn to_world(&self, p_dev: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (p_dev - self.t)
    }

    /// Composes `self` (world→a) with `offset` (a→b) into world→b.
    pub fn compose(&self, offset: &Pose) -> Pose {
        Pose {
            r: offset.r * self.r,
            t: offset.r * self.t + offset.t,
        }
    }

    /// Camera-convention look-at: +z forward, +x right, +y down.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Pose> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("look_at eye == target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("look_at direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Ok(Pose { r, t: -(r * eye) })
    }
}

/// Camera ray in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, dir: Vector3<f64>, near: f64, far: f64) -> Result<Ray> {
        if (dir.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "ray direction not unit (norm {})",
                dir.norm()
            )));
        }
        if !(0.0 < near && near < far) {
            return Err(Error::InvalidArgument(format!(
                "require 0 < near < far, got near={near} far={far}"
            )));
        }
        Ok(Ray {
            origin,
            dir,
            near,
            far,
        })
    }

    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// A calibrated camera.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub intrinsics: PinholeIntrinsics,
    pub pose: Pose,
}

impl Camera {
    /// Ray through sub-pixel coordinates (u, v). Callers addressing whole
    /// pixels should pass center coordinates (see [`Camera::ray_for_pixel`]).
    pub fn ray_at(&self, u: f64, v: f64, near: f64, far: f64) -> Result<Ray> {
        let k = &self.intrinsics;
        if !(0.0 <= u && u <= k.width as f64 && 0.0 <= v && v <= k.height as f64) {
            return Err(Error::InvalidArgument(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                k.width, k.height
            )));
        }
        let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = (self.pose.r.transpose() * dir_cam).normalize();
        Ray::new(self.pose.center(), dir, near, far)
    }

    /// Ray through the center of integer pixel (ix, iy).
    pub fn ray_for_pixel(&self, ix: usize, iy: usize, near: f64, far: f64) -> Result<Ray> {
        if ix >= self.intrinsics.width || iy >= self.intrinsics.height {
            return Err(Error::InvalidArgument(format!(
                "pixel ({ix}, {iy}) outside {}x{} image",
                self.intrinsics.width, self.intrinsics.height
            )));
        }
        self.ray_at(ix as f64 + 0.5, iy as f64 + 0.5, near, far)
    }
}

/// Result of projecting a world point into a device.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Device-frame z; non-positive means the point is behind the device.
    pub depth: f64,
}

impl Projection {
    pub fn behind(&self) -> bool {
        self.depth <= 0.0
    }
}

/// Perspective projection of a world point. Points behind the device are
/// legal; the caller checks [`Projection::behind`].
pub fn project_point(k: &PinholeIntrinsics, pose: &Pose, p_world: &Vector3<f64>) -> Projection {
    let p = pose.to_device(p_world);
    Projection {
        u: k.fx * (p.x / p.z) + k.cx,
        v: k.fy * (p.y / p.z) + k.cy,
        depth: p.z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some_pose() -> Pose {
        Pose::look_at(
            Vector3::new(1.3, -0.4, 2.0),
            Vector3::new(0.0, 0.1, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let cam = Camera {
            intrinsics: PinholeIntrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 32.0,
                cy: 24.0,
                width: 64,
                height: 48,
            },
            pose: Pose::identity(),
        };
        let ray = cam.ray_at(32.0, 24.0, 0.1, 10.0).unwrap();
        assert!((ray.dir - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(ray.origin.norm() < 1e-12);
    }

    #[test]
    fn origin_is_camera_center() {
        let pose = some_pose();
        let cam = Camera {
            intrinsics: PinholeIntrinsics::from_fov(64, 64, 60.0),
            pose,
        };
        let ray = cam.ray_for_pixel(10, 20, 0.1, 5.0).unwrap();
        let center = -(pose.r.transpose() * pose.t);
        assert!((ray.origin - center).norm() < 1e-12);
    }

    #[test]
    fn pixel_outside_bounds_rejected() {
        let cam = Camera {
            intrinsics: PinholeIntrinsics::from_fov(64, 64, 60.0),
            pose: Pose::identity(),
        };
        assert!(cam.ray_for_pixel(64, 0, 0.1, 1.0).is_err());
        assert!(cam.ray_at(-0.5, 3.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn backproject_then_reproject_roundtrips() {
        let k = PinholeIntrinsics {
            fx: 480.0,
            fy: 500.0,
            cx: 310.0,
            cy: 245.0,
            width: 640,
            height: 480,
        };
        let pose = some_pose();
        let cam = Camera {
            intrinsics: k,
            pose,
        };
        let mut rng = crate::rng::stream(11, "roundtrip", &[]);
        use rand::Rng;
        for _ in 0..100 {
            let u: f64 = rng.gen_range(0.0..640.0);
            let v: f64 = rng.gen_range(0.0..480.0);
            let d: f64 = rng.gen_range(0.5..4.0);
            let ray = cam.ray_at(u, v, 0.01, 100.0).unwrap();
            // Lift to device depth d along the ray.
            let zc = (pose.r * ray.dir).z;
            let p = ray.point_at(d / zc);
            let proj = project_point(&k, &pose, &p);
            assert!((proj.u - u).abs() < 1e-9 && (proj.v - v).abs() < 1e-9);
            assert!((proj.depth - d).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        let ident = PinholeIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 1,
            height: 1,
        };
        let p = project_point(&ident, &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0));
        assert_eq!((p.u, p.v, p.depth), (0.0, 0.0, 1.0));

        let k = PinholeIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        let p = project_point(&k, &Pose::identity(), &Vector3::new(0.0, 0.0, 2.0));
        assert_eq!((p.u, p.v, p.depth), (320.0, 240.0, 2.0));
        assert!(!p.behind());

        let b = project_point(&k, &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(b.behind());
    }

    #[test]
    fn projection_is_scale_consistent() {
        // Scaling the device-frame point leaves (u, v) unchanged.
        let k = PinholeIntrinsics::from_fov(64, 64, 60.0);
        let pose = some_pose();
        let p = Vector3::new(0.2, -0.1, 0.4);
        let proj1 = project_point(&k, &pose, &p);
        let dev2 = pose.to_device(&p) * 2.0;
        let p2 = pose.to_world(&dev2);
        let proj2 = project_point(&k, &pose, &p2);
        assert!((proj1.u - proj2.u).abs() < 1e-9);
        assert!((proj1.v - proj2.v).abs() < 1e-9);
    }

    #[test]
    fn pose_composition_stays_orthonormal() {
        let mut pose = some_pose();
        let step = Pose::look_at(
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        for _ in 0..1000 {
            pose = pose.compose(&step);
        }
        pose.validate().unwrap();
    }
}
