//! On-disk dataset layout and loader.
//!
//! A dataset directory holds:
//!   manifest.toml      capture list, clip planes, illumination record
//!   calib/             per-device calibration files (versioned schema)
//!   patterns/          projector pattern images (PNG)
//!   images/ depth/ masks/   per-capture PNG / PFM / PNG files
//!
//! Calibration schema ("calib-v1"): intrinsics in pixels, pose as
//! row-major R and t (meters). Camera poses are world→device; projector
//! poses are expressed relative to the camera (`frame = "camera"`) and
//! composed with each capture's camera pose at load time, since the
//! projectors ride with the camera.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, PatternImage, PinholeIntrinsics, Pose, ProjectorModel};
use crate::imageio;

pub const DATASET_SCHEMA: &str = "dataset-v1";
pub const CALIB_SCHEMA: &str = "calib-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub schema: String,
    pub seed: u64,
    pub units: String,
    pub near: f64,
    pub far: f64,
    pub illumination: IlluminationRecord,
    #[serde(default)]
    pub scene: Option<toml::Value>,
    pub projectors: Vec<ProjectorRef>,
    pub patterns: Vec<PatternRef>,
    pub captures: Vec<CaptureRecord>,
}

/// Ground-truth illumination used during synthesis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationRecord {
    pub ir: f64,
    pub ib: f64,
    pub ambient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorRef {
    pub calib: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRef {
    pub id: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRecord {
    pub image: String,
    pub depth: Option<String>,
    pub mask: Option<String>,
    pub camera: String,
    /// Pattern id per projector for this capture.
    pub patterns: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibFile {
    pub schema: String,
    /// "camera" or "projector".
    pub kind: String,
    /// "world" or "camera" (projectors are camera-relative).
    pub frame: String,
    pub intrinsics: PinholeIntrinsics,
    pub pose: PoseRecord,
    /// Default pattern path (projectors only).
    #[serde(default)]
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// Row-major 3×3 rotation.
    pub rotation: Vec<f64>,
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> PoseRecord {
        PoseRecord {
            rotation: p.r.transpose().as_slice().to_vec(), // nalgebra is column-major
            translation: [p.t.x, p.t.y, p.t.z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        if self.rotation.len() != 9 {
            return Err(Error::InvalidArgument(format!(
                "rotation must have 9 entries, got {}",
                self.rotation.len()
            )));
        }
        let r = Matrix3::from_row_slice(&self.rotation);
        Pose::new(r, Vector3::from(self.translation))
    }
}

/// One loaded capture: camera, per-capture projector set (world poses),
/// and the ground-truth image (plus optional depth and mask).
#[derive(Debug, Clone)]
pub struct Capture {
    pub camera: Camera,
    pub projectors: Vec<ProjectorModel>,
    /// H×W×3 in [0,1].
    pub image: Vec<f64>,
    pub mask: Option<Vec<bool>>,
    pub depth: Option<Vec<f64>>,
}

/// A fully loaded and validated dataset.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub captures: Vec<Capture>,
    pub near: f64,
    pub far: f64,
    pub illumination: IlluminationRecord,
    pub seed: u64,
    pub root: PathBuf,
}

impl SceneDataset {
    pub fn width(&self) -> usize {
        self.captures[0].camera.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.captures[0].camera.intrinsics.height
    }

    pub fn pixel(&self, capture: usize, x: usize, y: usize) -> [f64; 3] {
        let w = self.captures[capture].camera.intrinsics.width;
        let at = (y * w + x) * 3;
        let img = &self.captures[capture].image;
        [img[at], img[at + 1], img[at + 2]]
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text =
        toml::to_string(value).map_err(|e| Error::Config(format!("serializing: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads and validates a dataset directory against the schema.
pub fn load_dataset(root: &Path) -> Result<SceneDataset> {
    let manifest_path = root.join("manifest.toml");
    let manifest: ManifestFile = read_toml(&manifest_path)?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(Error::schema(
            &manifest_path,
            format!(
                "schema {} not supported (expected {DATASET_SCHEMA})",
                manifest.schema
            ),
        ));
    }
    if manifest.captures.is_empty() {
        return Err(Error::schema(&manifest_path, "dataset has no captures"));
    }
    if !(manifest.near > 0.0 && manifest.near < manifest.far) {
        return Err(Error::schema(&manifest_path, "require 0 < near < far"));
    }

    // Patterns by id.
    let mut patterns: Vec<Option<PatternImage>> = Vec::new();
    for p in &manifest.patterns {
        let (w, h, data) = imageio::load_png_rgb(&root.join(&p.file))?;
        let img = PatternImage::new(w, h, data)?;
        if patterns.len() <= p.id {
            patterns.resize(p.id + 1, None);
        }
        patterns[p.id] = Some(img);
    }

    // Projector device calibrations (camera-relative offsets).
    let mut proj_calibs = Vec::new();
    for pr in &manifest.projectors {
        let path = root.join(&pr.calib);
        let calib: CalibFile = read_toml(&path)?;
        validate_calib(&path, &calib, "projector", "camera")?;
        proj_calibs.push(calib);
    }

    let mut captures = Vec::with_capacity(manifest.captures.len());
    for rec in &manifest.captures {
        let cam_path = root.join(&rec.camera);
        let cam_calib: CalibFile = read_toml(&cam_path)?;
        validate_calib(&cam_path, &cam_calib, "camera", "world")?;
        let cam_pose = cam_calib.pose.to_pose()?;
        let camera = Camera {
            intrinsics: cam_calib.intrinsics,
            pose: cam_pose,
        };

        if rec.patterns.len() != proj_calibs.len() {
            return Err(Error::schema(
                &manifest_path,
                format!(
                    "capture {} assigns {} patterns for {} projectors",
                    rec.image,
                    rec.patterns.len(),
                    proj_calibs.len()
                ),
            ));
        }
        let mut projectors = Vec::with_capacity(proj_calibs.len());
        for (calib, &pat_id) in proj_calibs.iter().zip(&rec.patterns) {
            let pattern = patterns
                .get(pat_id)
                .and_then(|p| p.clone())
                .ok_or_else(|| {
                    Error::schema(&manifest_path, format!("unknown pattern id {pat_id}"))
                })?;
            let offset = calib.pose.to_pose()?;
            let world_pose = cam_pose.compose(&offset);
            projectors.push(ProjectorModel::new(calib.intrinsics, world_pose, pattern)?);
        }

        let img_path = root.join(&rec.image);
        let (w, h, image) = imageio::load_png_rgb(&img_path)?;
        if w != camera.intrinsics.width || h != camera.intrinsics.height {
            return Err(Error::schema(
                &img_path,
                format!(
                    "image {w}x{h} does not match camera intrinsics {}x{}",
                    camera.intrinsics.width, camera.intrinsics.height
                ),
            ));
        }
        let mask = match &rec.mask {
            Some(m) => {
                let (mw, mh, mask) = imageio::load_png_mask(&root.join(m))?;
                if mw != w || mh != h {
                    return Err(Error::schema(root.join(m), "mask size mismatch"));
                }
                Some(mask)
            }
            None => None,
        };
        let depth = match &rec.depth {
            Some(d) => {
                let path = root.join(d);
                let (dw, dh, ch, depth) = imageio::load_pfm(&path)?;
                if dw != w || dh != h || ch != 1 {
                    return Err(Error::schema(path, "depth map size mismatch"));
                }
                Some(depth)
            }
            None => None,
        };
        captures.push(Capture {
            camera,
            projectors,
            image,
            mask,
            depth,
        });
    }

    Ok(SceneDataset {
        captures,
        near: manifest.near,
        far: manifest.far,
        illumination: manifest.illumination,
        seed: manifest.seed,
        root: root.to_path_buf(),
    })
}

fn validate_calib(path: &Path, calib: &CalibFile, kind: &str, frame: &str) -> Result<()> {
    if calib.schema != CALIB_SCHEMA {
        return Err(Error::schema(
            path,
            format!("schema {} (expected {CALIB_SCHEMA})", calib.schema),
        ));
    }
    if calib.kind != kind {
        return Err(Error::schema(
            path,
            format!("kind {} (expected {kind})", calib.kind),
        ));
    }
    if calib.frame != frame {
        return Err(Error::schema(
            path,
            format!("frame {} (expected {frame})", calib.frame),
        ));
    }
    calib.intrinsics.validate()?;
    calib.pose.to_pose()?;
    Ok(())
}
