//! Ground-truth data synthesis: analytic scenes rendered by sphere
//! tracing with pattern projection, emitted as on-disk datasets.

pub mod pattern;
pub mod scene;
pub mod trace;

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    CalibFile, CaptureRecord, IlluminationRecord, ManifestFile, PatternRef, PoseRecord,
    ProjectorRef, CALIB_SCHEMA, DATASET_SCHEMA,
};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::geometry::{Camera, PatternImage, PinholeIntrinsics, Pose, ProjectorModel};
use crate::imageio;
pub use pattern::{rasterize_pattern, PatternSpec};
pub use scene::{AlbedoSpec, AnalyticScene, SceneKind};
pub use trace::{sphere_trace, Hit};

/// Camera + projector rig riding on an orbit trajectory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub cam_width: usize,
    pub cam_height: usize,
    pub cam_fov_deg: f64,
    pub proj_width: usize,
    pub proj_height: usize,
    pub proj_fov_deg: f64,
    /// Signed lateral projector offsets from the camera, meters.
    pub baselines: Vec<f64>,
    /// Distance at which projector axes converge on the camera axis;
    /// 0 keeps them parallel.
    pub toe_in_distance: f64,
    /// Vertical projector offset (camera frame), meters.
    pub vertical_offset: f64,
    pub orbit_radius: f64,
    pub orbit_elevation_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            cam_width: 64,
            cam_height: 64,
            cam_fov_deg: 60.0,
            proj_width: 128,
            proj_height: 128,
            proj_fov_deg: 60.0,
            baselines: vec![-0.6, -0.2, 0.2, 0.6],
            toe_in_distance: 2.0,
            vertical_offset: 0.0,
            orbit_radius: 2.0,
            orbit_elevation_deg: 12.0,
        }
    }
}

impl RigConfig {
    pub fn camera_intrinsics(&self) -> PinholeIntrinsics {
        PinholeIntrinsics::from_fov(self.cam_width, self.cam_height, self.cam_fov_deg)
    }

    pub fn projector_intrinsics(&self) -> PinholeIntrinsics {
        PinholeIntrinsics::from_fov(self.proj_width, self.proj_height, self.proj_fov_deg)
    }

    /// Camera-relative pose of projector `k` (world = camera frame here).
    pub fn projector_offset(&self, k: usize) -> Result<Pose> {
        let eye = Vector3::new(self.baselines[k], self.vertical_offset, 0.0);
        if self.toe_in_distance > 0.0 {
            // Aim at the camera axis at the working distance. Camera frame
            // has +y down, so "up" for the look-at is −y.
            Pose::look_at(
                eye,
                Vector3::new(0.0, 0.0, self.toe_in_distance),
                Vector3::new(0.0, -1.0, 0.0),
            )
        } else {
            Pose::new(nalgebra::Matrix3::identity(), -eye)
        }
    }

    /// World→camera pose of orbit view `i` of `count` (z-up world, target
    /// at the origin).
    pub fn orbit_pose(&self, i: usize, count: usize) -> Result<Pose> {
        let az = 2.0 * std::f64::consts::PI * i as f64 / count.max(1) as f64;
        let el = self.orbit_elevation_deg.to_radians();
        let eye = Vector3::new(
            self.orbit_radius * el.cos() * az.cos(),
            self.orbit_radius * el.cos() * az.sin(),
            self.orbit_radius * el.sin(),
        );
        Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0))
    }

    /// Projector models in world coordinates for a given camera pose.
    pub fn projectors_for(
        &self,
        cam_pose: &Pose,
        patterns: &[PatternImage],
        assignment: &[usize],
    ) -> Result<Vec<ProjectorModel>> {
        let k_int = self.projector_intrinsics();
        (0..self.baselines.len())
            .map(|k| {
                let world = cam_pose.compose(&self.projector_offset(k)?);
                ProjectorModel::new(k_int, world, patterns[assignment[k]].clone())
            })
            .collect()
    }
}

/// One synthesized view, pre-quantization.
#[derive(Debug, Clone)]
pub struct ViewRender {
    pub width: usize,
    pub height: usize,
    /// Raw blended color (may exceed 1; clamped at 8-bit write).
    pub image: Vec<f64>,
    /// +inf where the ray missed.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Renders one view by per-pixel sphere tracing: surface color is
/// ambient·albedo + (i_r·albedo + i_b) ⊙ ΣQ_k, the true-surface analog of
/// the volumetric blend. Projector shadowing is deliberately ignored so
/// the data matches the renderer's assumption.
pub fn synth_view(
    scene: &AnalyticScene,
    camera: &Camera,
    projectors: &[ProjectorModel],
    ir: f64,
    ib: f64,
    near: f64,
    far: f64,
    mode: ExecMode,
) -> Result<ViewRender> {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let rows = map_chunks(mode, h, 8, |range| -> Result<Vec<(Vec<f64>, Vec<f64>, Vec<bool>)>> {
        let mut out = Vec::with_capacity(range.len());
        for y in range {
            let mut img = vec![0.0; w * 3];
            let mut depth = vec![f64::INFINITY; w];
            let mut mask = vec![false; w];
            for x in 0..w {
                let ray = camera.ray_for_pixel(x, y, near, far)?;
                if let Some(hit) = sphere_trace(scene, &ray) {
                    let mut sq = [0.0f64; 3];
                    for p in projectors {
                        let q = p.cast_color(&hit.point);
                        sq[0] += q[0];
                        sq[1] += q[1];
                        sq[2] += q[2];
                    }
                    for ch in 0..3 {
                        img[x * 3 + ch] = scene.ambient * hit.albedo[ch]
                            + (ir * hit.albedo[ch] + ib) * sq[ch];
                    }
                    depth[x] = hit.t;
                    mask[x] = true;
                }
            }
            out.push((img, depth, mask));
        }
        Ok(out)
    });
    let mut image = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for chunk in rows {
        for (i, d, m) in chunk? {
            image.extend(i);
            depth.extend(d);
            mask.extend(m);
        }
    }
    Ok(ViewRender {
        width: w,
        height: h,
        image,
        depth,
        mask,
    })
}

/// Full generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub views: usize,
    pub scene: SceneKind,
    pub albedo: AlbedoSpec,
    /// Ambient light level: 1.0 = normal, 0.0 = dark.
    pub ambient: f64,
    pub ir: f64,
    pub ib: f64,
    pub rig: RigConfig,
    pub pattern: PatternSpec,
    pub exec: ExecMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            views: 20,
            scene: SceneKind::Sphere { radius: 0.5 },
            albedo: AlbedoSpec::default(),
            ambient: 1.0,
            ir: 0.4,
            ib: 0.1,
            rig: RigConfig::default(),
            pattern: PatternSpec::default(),
            exec: ExecMode::default(),
        }
    }
}

impl SynthConfig {
    /// Clip planes covering the scene and the field's init surface.
    pub fn clip_planes(&self, scene: &AnalyticScene) -> (f64, f64) {
        let bound = scene.bounding_radius().max(1.0);
        let near = (self.rig.orbit_radius - 1.5 * bound).max(0.05);
        let far = self.rig.orbit_radius + 1.5 * bound;
        (near, far)
    }
}

/// Generates and writes a dataset directory. Multi-image pattern kinds
/// (the graycode stack) emit one capture per pattern per view, mirroring
/// multi-shot structured light; single-image kinds emit one capture per
/// view with every projector showing the same pattern.
pub fn synth_dataset(config: &SynthConfig, out_dir: &Path) -> Result<ManifestFile> {
    if config.views == 0 {
        return Err(Error::InvalidArgument("need at least one view".into()));
    }
    let scene = AnalyticScene::new(config.scene.clone(), config.albedo.clone(), config.ambient)?;
    let rig = &config.rig;
    let patterns = rasterize_pattern(&config.pattern, rig.proj_width, rig.proj_height)?;
    let (near, far) = config.clip_planes(&scene);

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut pattern_refs = Vec::new();
    for (i, img) in patterns.iter().enumerate() {
        let rel = format!("patterns/pattern_{i:02}.png");
        imageio::save_png_rgb(&out_dir.join(&rel), img.width, img.height, &img.pixels)?;
        pattern_refs.push(PatternRef { id: i, file: rel });
    }

    let mut projector_refs = Vec::new();
    for k in 0..rig.baselines.len() {
        let rel = format!("calib/projector_{k}.toml");
        let calib = CalibFile {
            schema: CALIB_SCHEMA.into(),
            kind: "projector".into(),
            frame: "camera".into(),
            intrinsics: rig.projector_intrinsics(),
            pose: PoseRecord::from_pose(&rig.projector_offset(k)?),
            pattern: Some(pattern_refs[0].file.clone()),
        };
        crate::dataset::write_toml(&out_dir.join(&rel), &calib)?;
        projector_refs.push(ProjectorRef { calib: rel });
    }

    let cam_intrinsics = rig.camera_intrinsics();
    let shots_per_view = patterns.len().max(1);
    let mut captures = Vec::new();
    let mut capture_idx = 0usize;
    for view in 0..config.views {
        let cam_pose = rig.orbit_pose(view, config.views)?;
        let camera = Camera {
            intrinsics: cam_intrinsics,
            pose: cam_pose,
        };
        let cam_rel = format!("calib/camera_{view:04}.toml");
        let calib = CalibFile {
            schema: CALIB_SCHEMA.into(),
            kind: "camera".into(),
            frame: "world".into(),
            intrinsics: cam_intrinsics,
            pose: PoseRecord::from_pose(&cam_pose),
            pattern: None,
        };
        crate::dataset::write_toml(&out_dir.join(&cam_rel), &calib)?;

        for shot in 0..shots_per_view {
            let assignment = vec![shot; rig.baselines.len()];
            let projectors = rig.projectors_for(&cam_pose, &patterns, &assignment)?;
            let render = synth_view(
                &scene, &camera, &projectors, config.ir, config.ib, near, far, config.exec,
            )?;
            let image_rel = format!("images/view_{capture_idx:04}.png");
            let depth_rel = format!("depth/view_{capture_idx:04}.pfm");
            let mask_rel = format!("masks/view_{capture_idx:04}.png");
            imageio::save_png_rgb(
                &out_dir.join(&image_rel),
                render.width,
                render.height,
                &render.image,
            )?;
            imageio::save_pfm(
                &out_dir.join(&depth_rel),
                render.width,
                render.height,
                1,
                &render.depth,
            )?;
            imageio::save_png_mask(
                &out_dir.join(&mask_rel),
                render.width,
                render.height,
                &render.mask,
            )?;
            captures.push(CaptureRecord {
                image: image_rel,
                depth: Some(depth_rel),
                mask: Some(mask_rel),
                camera: cam_rel.clone(),
                patterns: assignment,
            });
            capture_idx += 1;
        }
    }

    let manifest = ManifestFile {
        schema: DATASET_SCHEMA.into(),
        seed: config.seed,
        units: "meters".into(),
        near,
        far,
        illumination: IlluminationRecord {
            ir: config.ir,
            ib: config.ib,
            ambient: config.ambient,
        },
        scene: Some(
            toml::Value::try_from(&config.scene)
                .map_err(|e| Error::Config(format!("scene echo: {e}")))?,
        ),
        projectors: projector_refs,
        patterns: pattern_refs,
        captures,
    };
    crate::dataset::write_toml(&out_dir.join("manifest.toml"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dark_ambient_laser_pixel_quantizes_to_26() {
        // Black albedo, ambient 0, i_b = 0.1, surface point on a green
        // laser line: stored pixel is (0, 0.1, 0) → 8-bit (0, 26, 0).
        let scene = AnalyticScene::new(
            SceneKind::Sphere { radius: 0.5 },
            AlbedoSpec::Solid { color: [0.0; 3] },
            0.0,
        )
        .unwrap();
        let rig = RigConfig {
            baselines: vec![0.0],
            toe_in_distance: 0.0,
            ..RigConfig::default()
        };
        let cam_pose = rig.orbit_pose(0, 1).unwrap();
        let camera = Camera {
            intrinsics: rig.camera_intrinsics(),
            pose: cam_pose,
        };
        // Single co-located projector: the center pixel sees the cross.
        let patterns = rasterize_pattern(
            &PatternSpec::CrossLaser {
                horizontal_color: [0.0, 1.0, 0.0],
                vertical_color: [0.0, 1.0, 0.0],
                line_width_px: 5,
            },
            rig.proj_width,
            rig.proj_height,
        )
        .unwrap();
        let projectors = rig.projectors_for(&cam_pose, &patterns, &[0]).unwrap();
        let render = synth_view(
            &scene,
            &camera,
            &projectors,
            0.4,
            0.1,
            0.5,
            3.5,
            ExecMode::Sequential,
        )
        .unwrap();
        let (cx, cy) = (rig.cam_width / 2, rig.cam_height / 2);
        let at = (cy * rig.cam_width + cx) * 3;
        assert_eq!(render.image[at], 0.0);
        assert!((render.image[at + 1] - 0.1).abs() < 1e-12);
        assert_eq!(imageio::quantize8(render.image[at + 1]), 26);
        assert!(render.mask[cy * rig.cam_width + cx]);
    }

    #[test]
    fn no_projectors_normal_ambient_is_pure_albedo() {
        let scene = AnalyticScene::new(
            SceneKind::Sphere { radius: 0.5 },
            AlbedoSpec::Solid {
                color: [0.3, 0.6, 0.9],
            },
            1.0,
        )
        .unwrap();
        let rig = RigConfig {
            baselines: vec![],
            ..RigConfig::default()
        };
        let cam_pose = rig.orbit_pose(0, 1).unwrap();
        let camera = Camera {
            intrinsics: rig.camera_intrinsics(),
            pose: cam_pose,
        };
        let render = synth_view(&scene, &camera, &[], 0.4, 0.1, 0.5, 3.5, ExecMode::Sequential)
            .unwrap();
        let (cx, cy) = (rig.cam_width / 2, rig.cam_height / 2);
        let at = (cy * rig.cam_width + cx) * 3;
        assert_eq!(
            &render.image[at..at + 3],
            &[0.3, 0.6, 0.9],
            "center pixel must be pure albedo"
        );
        // Mask is exactly the finite-depth set.
        for i in 0..render.mask.len() {
            assert_eq!(render.mask[i], render.depth[i].is_finite());
        }
    }

    #[test]
    fn depth_maps_lie_on_the_surface() {
        let scene = AnalyticScene::new(SceneKind::Blob, AlbedoSpec::default(), 1.0).unwrap();
        let rig = RigConfig::default();
        let cam_pose = rig.orbit_pose(3, 8).unwrap();
        let camera = Camera {
            intrinsics: rig.camera_intrinsics(),
            pose: cam_pose,
        };
        let render =
            synth_view(&scene, &camera, &[], 0.0, 0.0, 0.5, 3.5, ExecMode::Sequential).unwrap();
        let mut hits = 0;
        for y in 0..rig.cam_height {
            for x in 0..rig.cam_width {
                let d = render.depth[y * rig.cam_width + x];
                if d.is_finite() {
                    hits += 1;
                    let ray = camera.ray_for_pixel(x, y, 0.5, 3.5).unwrap();
                    assert!(scene.sdf(&ray.point_at(d)).abs() < 1e-5);
                }
            }
        }
        assert!(hits > 50, "blob should cover pixels, got {hits}");
    }
}
