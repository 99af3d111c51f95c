//! Sphere tracing against analytic scenes: the ground-truth geometry
//! oracle for data synthesis and evaluation.

use nalgebra::Vector3;

use super::scene::AnalyticScene;
use crate::geometry::Ray;

const HIT_EPS: f64 = 1e-6;
const MAX_STEPS: usize = 512;

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub albedo: [f64; 3],
}

/// Marches along the ray stepping by the current distance bound; a hit is
/// declared at |f| < 1e-6, a miss when the ray leaves [near, far] or the
/// step budget runs out.
pub fn sphere_trace(scene: &AnalyticScene, ray: &Ray) -> Option<Hit> {
    let mut t = ray.near;
    for _ in 0..MAX_STEPS {
        let p = ray.point_at(t);
        let d = scene.sdf(&p);
        if d.abs() < HIT_EPS {
            return Some(Hit {
                t,
                point: p,
                normal: scene.normal(&p),
                albedo: scene.albedo(&p),
            });
        }
        t += d;
        if t < ray.near || t > ray.far {
            return None;
        }
    }
    None
}
