//! Analytic test scenes: exact signed distance primitives (Lipschitz ≤ 1)
//! with simple per-surface-point albedo functions.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PatternImage;
use crate::imageio;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SceneKind {
    Sphere {
        #[serde(default = "default_radius")]
        radius: f64,
    },
    Box {
        #[serde(default = "default_half_extents")]
        half_extents: [f64; 3],
    },
    /// Union of spheres as (center, radius) pairs; exact min keeps the
    /// distance bound.
    SphereUnion { spheres: Vec<([f64; 3], f64)> },
    Torus {
        #[serde(default = "default_major")]
        major_radius: f64,
        #[serde(default = "default_minor")]
        minor_radius: f64,
    },
    /// Head-and-torso blob: capsule body with a sphere head.
    Blob,
}

fn default_radius() -> f64 {
    0.5
}
fn default_half_extents() -> [f64; 3] {
    [0.35, 0.35, 0.35]
}
fn default_major() -> f64 {
    0.4
}
fn default_minor() -> f64 {
    0.15
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlbedoSpec {
    Solid {
        color: [f64; 3],
    },
    /// 3-D checkerboard by cell parity.
    Checker {
        #[serde(default = "default_cell")]
        cell: f64,
        #[serde(default = "default_checker_a")]
        a: [f64; 3],
        #[serde(default = "default_checker_b")]
        b: [f64; 3],
    },
    /// Equirectangular image lookup by surface direction from the origin.
    Image { path: String },
}

fn default_cell() -> f64 {
    0.15
}
fn default_checker_a() -> [f64; 3] {
    [0.85, 0.55, 0.35]
}
fn default_checker_b() -> [f64; 3] {
    [0.25, 0.45, 0.65]
}

impl Default for AlbedoSpec {
    fn default() -> Self {
        AlbedoSpec::Checker {
            cell: default_cell(),
            a: default_checker_a(),
            b: default_checker_b(),
        }
    }
}

/// Ground-truth scene: geometry, albedo, and ambient light level
/// (1.0 = normal, 0.0 = dark).
#[derive(Debug, Clone)]
pub struct AnalyticScene {
    pub kind: SceneKind,
    pub albedo: AlbedoSpec,
    pub ambient: f64,
    albedo_image: Option<PatternImage>,
}

impl AnalyticScene {
    pub fn new(kind: SceneKind, albedo: AlbedoSpec, ambient: f64) -> Result<AnalyticScene> {
        if ambient < 0.0 {
            return Err(Error::InvalidArgument("ambient must be >= 0".into()));
        }
        let albedo_image = match &albedo {
            AlbedoSpec::Image { path } => {
                let (w, h, data) = imageio::load_png_rgb(std::path::Path::new(path))?;
                Some(PatternImage::new(w, h, data)?)
            }
            _ => None,
        };
        Ok(AnalyticScene {
            kind,
            albedo,
            ambient,
            albedo_image,
        })
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match &self.kind {
            SceneKind::Sphere { radius } => p.norm() - radius,
            SceneKind::Box { half_extents } => {
                let q = Vector3::new(
                    p.x.abs() - half_extents[0],
                    p.y.abs() - half_extents[1],
                    p.z.abs() - half_extents[2],
                );
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            SceneKind::SphereUnion { spheres } => spheres
                .iter()
                .map(|(c, r)| (p - Vector3::from(*c)).norm() - r)
                .fold(f64::INFINITY, f64::min),
            SceneKind::Torus {
                major_radius,
                minor_radius,
            } => {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major_radius;
                (ring * ring + p.z * p.z).sqrt() - minor_radius
            }
            SceneKind::Blob => {
                let body = capsule(p, Vector3::new(0.0, 0.0, -0.30), Vector3::new(0.0, 0.0, 0.10), 0.22);
                let head = (p - Vector3::new(0.0, 0.0, 0.32)).norm() - 0.14;
                body.min(head)
            }
        }
    }

    /// Surface normal by central differences of the exact SDF.
    pub fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-6;
        let mut n = Vector3::zeros();
        for axis in 0..3 {
            let mut dp = Vector3::zeros();
            dp[axis] = h;
            n[axis] = (self.sdf(&(p + dp)) - self.sdf(&(p - dp))) / (2.0 * h);
        }
        n.normalize()
    }

    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        match &self.albedo {
            AlbedoSpec::Solid { color } => *color,
            AlbedoSpec::Checker { cell, a, b } => {
                let parity = ((p.x / cell).floor() + (p.y / cell).floor() + (p.z / cell).floor())
                    .rem_euclid(2.0);
                if parity < 1.0 {
                    *a
                } else {
                    *b
                }
            }
            AlbedoSpec::Image { .. } => {
                let img = self.albedo_image.as_ref().expect("loaded at construction");
                let d = p.normalize();
                let u = (d.y.atan2(d.x) / (2.0 * std::f64::consts::PI) + 0.5)
                    * (img.width - 1) as f64;
                let v = (d.z.clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
                    * (img.height - 1) as f64;
                img.bilinear_sample(u, v)
            }
        }
    }

    /// Loose bounding radius used for clip planes and regularizer sampling.
    pub fn bounding_radius(&self) -> f64 {
        match &self.kind {
            SceneKind::Sphere { radius } => *radius,
            SceneKind::Box { half_extents } => {
                Vector3::from(*half_extents).norm()
            }
            SceneKind::SphereUnion { spheres } => spheres
                .iter()
                .map(|(c, r)| Vector3::from(*c).norm() + r)
                .fold(0.0, f64::max),
            SceneKind::Torus {
                major_radius,
                minor_radius,
            } => major_radius + minor_radius,
            SceneKind::Blob => 0.52,
        }
    }
}

fn capsule(p: &Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, r: f64) -> f64 {
    let pa = p - a;
    let ba = b - a;
    let h = (pa.dot(&ba) / ba.dot(&ba)).clamp(0.0, 1.0);
    (pa - ba * h).norm() - r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenes() -> Vec<AnalyticScene> {
        vec![
            AnalyticScene::new(SceneKind::Sphere { radius: 0.5 }, AlbedoSpec::default(), 1.0)
                .unwrap(),
            AnalyticScene::new(
                SceneKind::Box {
                    half_extents: [0.3, 0.2, 0.4],
                },
                AlbedoSpec::default(),
                1.0,
            )
            .unwrap(),
            AnalyticScene::new(
                SceneKind::SphereUnion {
                    spheres: vec![([0.2, 0.0, 0.0], 0.3), ([-0.2, 0.1, 0.0], 0.25)],
                },
                AlbedoSpec::default(),
                1.0,
            )
            .unwrap(),
            AnalyticScene::new(
                SceneKind::Torus {
                    major_radius: 0.4,
                    minor_radius: 0.15,
                },
                AlbedoSpec::default(),
                1.0,
            )
            .unwrap(),
            AnalyticScene::new(SceneKind::Blob, AlbedoSpec::default(), 1.0).unwrap(),
        ]
    }

    #[test]
    fn sdf_is_lipschitz_one() {
        use rand::Rng;
        let mut r = crate::rng::stream(21, "lipschitz", &[]);
        for scene in scenes() {
            for _ in 0..500 {
                let a = Vector3::new(
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                );
                let b = Vector3::new(
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                );
                let df = (scene.sdf(&a) - scene.sdf(&b)).abs();
                assert!(df <= (a - b).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn sphere_distances_are_exact() {
        let s = &scenes()[0];
        assert_eq!(s.sdf(&Vector3::new(0.0, 0.0, 0.0)), -0.5);
        assert_eq!(s.sdf(&Vector3::new(0.5, 0.0, 0.0)), 0.0);
        assert!((s.sdf(&Vector3::new(0.0, 2.0, 0.0)) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn checker_albedo_alternates() {
        let s = AnalyticScene::new(
            SceneKind::Sphere { radius: 0.5 },
            AlbedoSpec::Checker {
                cell: 0.1,
                a: [1.0; 3],
                b: [0.0; 3],
            },
            1.0,
        )
        .unwrap();
        let a = s.albedo(&Vector3::new(0.05, 0.05, 0.05));
        let b = s.albedo(&Vector3::new(0.15, 0.05, 0.05));
        assert_ne!(a, b);
    }
}
