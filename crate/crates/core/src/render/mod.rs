//! Volumetric rendering with pattern projection.
//!
//! Per camera ray: stratified samples, one importance-resampling round
//! from the coarse opacity weights, SDF→alpha conversion through the
//! sharpness sigmoid, per-sample color blending with the summed projector
//! pattern colors, and front-to-back compositing.
//!
//! Two evaluation paths share kernels and operation order: a plain path
//! for inference and a taped path for training. For equal parameters
//! their outputs are bit-identical; a unit test pins this.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::fields::{SceneModel, TapedFields};
use crate::geometry::{sample_hierarchical, sample_stratified, Camera, ProjectorModel, Ray};
use crate::rng;

const DENOM_EPS: f64 = 1e-12;
const NORM_EPS: f64 = 1e-24;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Importance-resampling rounds over the coarse weights.
    pub fine_rounds: usize,
    /// Constant background color weighted by residual transmittance.
    pub background: [f64; 3],
    /// Stratified jitter (off = bin midpoints).
    pub perturb: bool,
    /// Rays per work chunk; fixed chunking keeps reductions deterministic.
    pub chunk_rays: usize,
    pub exec: ExecMode,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_coarse: 16,
            n_fine: 16,
            fine_rounds: 1,
            background: [0.0; 3],
            perturb: true,
            chunk_rays: 32,
            exec: ExecMode::default(),
        }
    }
}

impl RenderConfig {
    pub fn samples_per_ray(&self) -> usize {
        self.n_coarse + self.n_fine
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_coarse < 2 {
            return Err(Error::InvalidArgument(format!(
                "need n_coarse >= 2, got {}",
                self.n_coarse
            )));
        }
        if self.fine_rounds == 0 && self.n_fine > 0 {
            return Err(Error::InvalidArgument("fine_rounds must be >= 1".into()));
        }
        if self.chunk_rays == 0 {
            return Err(Error::InvalidArgument("chunk_rays must be positive".into()));
        }
        Ok(())
    }
}

/// Eq.-style SDF→alpha for one consecutive sample pair.
pub fn alpha_from_sdf(f_i: f64, f_next: f64, s: f64) -> f64 {
    debug_assert!(s > 0.0);
    let phi_i = crate::kernels::sigmoid(f_i * s);
    let phi_n = crate::kernels::sigmoid(f_next * s);
    ((phi_i - phi_n) / phi_i.max(DENOM_EPS)).max(0.0)
}

/// Per-point pattern colors from every projector.
pub fn projected_color(p: &Vector3<f64>, projectors: &[ProjectorModel]) -> Vec<[f64; 3]> {
    projectors.iter().map(|pr| pr.cast_color(p)).collect()
}

/// The color blend: c = D + Σ_k (i_r·D + i_b)·Q_k, computed in the
/// factored form c = D·(i_r·ΣQ + 1) + i_b·ΣQ so the D = 0 limit is
/// exactly i_b·ΣQ.
pub fn blend_color(d: [f64; 3], qs: &[[f64; 3]], ir: f64, ib: f64) -> [f64; 3] {
    let mut sq = [0.0; 3];
    for q in qs {
        for ch in 0..3 {
            sq[ch] += q[ch];
        }
    }
    let mut out = [0.0; 3];
    for ch in 0..3 {
        out[ch] = d[ch] * (ir * sq[ch] + 1.0) + ib * sq[ch];
    }
    out
}

/// Front-to-back compositing of per-sample alphas and colors plus the
/// residual-transmittance background term. Returns (color, Σw, weights).
pub fn composite(
    alphas: &[f64],
    colors: &[[f64; 3]],
    background: [f64; 3],
) -> ([f64; 3], f64, Vec<f64>) {
    let mut t = 1.0;
    let mut weights = Vec::with_capacity(alphas.len());
    let mut color = [0.0; 3];
    let mut wsum = 0.0;
    for (a, c) in alphas.iter().zip(colors) {
        let w = t * a;
        weights.push(w);
        for ch in 0..3 {
            color[ch] += w * c[ch];
        }
        wsum += w;
        t *= -a + 1.0;
    }
    let resid = -wsum + 1.0;
    for ch in 0..3 {
        color[ch] += resid * background[ch];
    }
    (color, wsum, weights)
}

/// A ray with its frozen sample distances. Sampling is detached from the
/// differentiable pass: gradients flow through colors and opacities at
/// fixed sample positions.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub ray: Ray,
    pub ts: Vec<f64>,
}

impl RaySamples {
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ts.len() * 3);
        for &t in &self.ts {
            let p = self.ray.point_at(t);
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
        out
    }
}

/// Stratified + hierarchical sample placement for a chunk of rays. The
/// coarse weights are evaluated without gradients. `ray_rng(i, stage)`
/// supplies an independent stream per ray and stage (stage 0 is the
/// stratified pass, stage r ≥ 1 the r-th refinement round).
pub fn prepare_samples(
    model: &SceneModel,
    rays: &[Ray],
    cfg: &RenderConfig,
    ray_rng: impl Fn(usize, usize) -> rand_chacha::ChaCha8Rng,
) -> Result<Vec<RaySamples>> {
    cfg.validate()?;
    let s = model.sharpness_value();
    let mut samples: Vec<RaySamples> = Vec::with_capacity(rays.len());
    for (i, ray) in rays.iter().enumerate() {
        if !(ray.near < ray.far) {
            return Err(Error::InvalidArgument(format!(
                "degenerate ray: near {} >= far {}",
                ray.near, ray.far
            )));
        }
        let ts = if cfg.perturb {
            let mut rng_i = ray_rng(i, 0);
            let mut jit = || rand::Rng::gen_range(&mut rng_i, 0.0..1.0);
            sample_stratified(ray, cfg.n_coarse, Some(&mut jit))?
        } else {
            sample_stratified(ray, cfg.n_coarse, None)?
        };
        samples.push(RaySamples { ray: *ray, ts });
    }
    if cfg.n_fine == 0 {
        return Ok(samples);
    }
    let per_round = cfg.n_fine / cfg.fine_rounds;
    let leftover = cfg.n_fine - per_round * cfg.fine_rounds;
    for round in 0..cfg.fine_rounds {
        let mut m = per_round;
        if round == cfg.fine_rounds - 1 {
            m += leftover;
        }
        if m == 0 {
            continue;
        }
        // Batched coarse SDF evaluation for the whole chunk.
        let mut pts = Vec::new();
        for rs in &samples {
            pts.extend(rs.points());
        }
        let (f, _) = model.eval_sdf_batch(&pts);
        let mut at = 0;
        for (i, rs) in samples.iter_mut().enumerate() {
            let n = rs.ts.len();
            let fv = &f[at..at + n];
            at += n;
            let mut alphas = Vec::with_capacity(n);
            for j in 0..n {
                if j + 1 < n {
                    alphas.push(alpha_from_sdf(fv[j], fv[j + 1], s));
                } else {
                    alphas.push(0.0);
                }
            }
            let mut t = 1.0;
            let mut bin_w = Vec::with_capacity(n - 1);
            for (j, a) in alphas.iter().enumerate() {
                let w = t * a;
                if j + 1 < n {
                    bin_w.push(w);
                }
                t *= 1.0 - a;
            }
            let mut rng_i = ray_rng(i, round + 1);
            rs.ts = sample_hierarchical(&rs.ts, &bin_w, m, &mut rng_i)?;
        }
    }
    Ok(samples)
}

/// Per-ray outputs of the plain path.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub opacity: f64,
    /// Opacity-weighted expected depth (0 where the ray saw nothing).
    pub depth: f64,
    pub normal: Vector3<f64>,
}

/// Everything the taped pass needs besides parameters; all constants.
pub struct ChunkInputs {
    /// Flattened sample points (N×3), N = rays × samples_per_ray.
    pub pts: Vec<f64>,
    /// Per-sample unit view directions (N×3).
    pub dirs: Vec<f64>,
    /// Per-sample summed projector colors ΣQ (N×3).
    pub sq: Vec<f64>,
    pub rays: usize,
    pub samples: usize,
}

impl ChunkInputs {
    /// Assembles constant inputs for a chunk; `projectors[i]` is the
    /// projector set lighting ray `i`.
    pub fn assemble(samples: &[RaySamples], projectors: &[&[ProjectorModel]]) -> ChunkInputs {
        let rays = samples.len();
        let spr = samples.first().map(|s| s.ts.len()).unwrap_or(0);
        let mut pts = Vec::with_capacity(rays * spr * 3);
        let mut dirs = Vec::with_capacity(rays * spr * 3);
        let mut sq = Vec::with_capacity(rays * spr * 3);
        for (i, rs) in samples.iter().enumerate() {
            debug_assert_eq!(rs.ts.len(), spr, "uniform sample counts per chunk");
            let d = rs.ray.dir;
            for &t in &rs.ts {
                let p = rs.ray.point_at(t);
                pts.extend_from_slice(&[p.x, p.y, p.z]);
                dirs.extend_from_slice(&[d.x, d.y, d.z]);
                let mut acc = [0.0f64; 3];
                for proj in projectors[i] {
                    let q = proj.cast_color(&p);
                    acc[0] += q[0];
                    acc[1] += q[1];
                    acc[2] += q[2];
                }
                sq.extend_from_slice(&acc);
            }
        }
        ChunkInputs {
            pts,
            dirs,
            sq,
            rays,
            samples: spr,
        }
    }
}

/// Plain (no-gradient) render of one assembled chunk.
pub fn render_chunk_plain(
    model: &SceneModel,
    inputs: &ChunkInputs,
    ts: &[&[f64]],
    illum: (f64, f64),
    cfg: &RenderConfig,
) -> Vec<RenderOutput> {
    let n = inputs.rays * inputs.samples;
    if n == 0 {
        return Vec::new();
    }
    let (f, feat, grad) = model.eval_sdf_with_grad_batch(&inputs.pts);
    // Normals mirror the taped op order exactly.
    let mut normals = vec![0.0; n * 3];
    for i in 0..n {
        let (gx, gy, gz) = (grad[i * 3], grad[i * 3 + 1], grad[i * 3 + 2]);
        let norm = (gx * gx + gy * gy + gz * gz + NORM_EPS).sqrt();
        normals[i * 3] = gx / norm;
        normals[i * 3 + 1] = gy / norm;
        normals[i * 3 + 2] = gz / norm;
    }
    let d = model.eval_color_batch(&inputs.pts, &inputs.dirs, &normals, &feat);
    let (ir, ib) = illum;
    let mut c = vec![0.0; n * 3];
    for i in 0..n * 3 {
        c[i] = d[i] * (ir * inputs.sq[i] + 1.0) + ib * inputs.sq[i];
    }
    let s = model.sharpness_value();
    let spr = inputs.samples;
    let mut out = Vec::with_capacity(inputs.rays);
    for r in 0..inputs.rays {
        let fv = &f[r * spr..(r + 1) * spr];
        let mut alphas = Vec::with_capacity(spr);
        for j in 0..spr {
            if j + 1 < spr {
                let phi_i = crate::kernels::sigmoid(fv[j] * s);
                let phi_n = crate::kernels::sigmoid(fv[j + 1] * s);
                alphas.push(((phi_i - phi_n) / phi_i.max(DENOM_EPS)).max(0.0));
            } else {
                alphas.push(0.0);
            }
        }
        let mut t = 1.0;
        let mut color = [0.0; 3];
        let mut wsum = 0.0;
        let mut depth_acc = 0.0;
        let mut normal_acc = Vector3::zeros();
        for j in 0..spr {
            let w = t * alphas[j];
            let base = (r * spr + j) * 3;
            for ch in 0..3 {
                color[ch] += w * c[base + ch];
            }
            depth_acc += w * ts[r][j];
            normal_acc += w
                * Vector3::new(
                    grad[base],
                    grad[base + 1],
                    grad[base + 2],
                );
            wsum += w;
            t *= -alphas[j] + 1.0;
        }
        let resid = -wsum + 1.0;
        for ch in 0..3 {
            color[ch] += resid * cfg.background[ch];
        }
        let depth = depth_acc / wsum.max(DENOM_EPS);
        let normal = if normal_acc.norm() > 0.0 {
            normal_acc.normalize()
        } else {
            Vector3::zeros()
        };
        out.push(RenderOutput {
            color,
            opacity: wsum,
            depth,
            normal,
        });
    }
    out
}

/// Taped render outputs for one chunk.
pub struct TapedChunk<'t> {
    /// Per-ray composited color, one (rays) vector per channel.
    pub color: [Var<'t>; 3],
    /// Per-ray accumulated opacity Σw.
    pub opacity: Var<'t>,
    /// Per-sample spatial gradient components, (N×1) each.
    pub grad: [Var<'t>; 3],
}

/// Taped version of [`render_chunk_plain`]; identical op order.
pub fn render_chunk_taped<'t>(
    tape: &'t Tape,
    fields: &TapedFields<'t>,
    inputs: &ChunkInputs,
    cfg: &RenderConfig,
) -> Result<TapedChunk<'t>> {
    let n = inputs.rays * inputs.samples;
    let sdf = fields.sdf_forward(tape, &inputs.pts)?;
    let [gx, gy, gz] = sdf.grad;
    let norm = gx
        .mul(gx)?
        .add(gy.mul(gy)?)?
        .add(gz.mul(gz)?)?
        .add_const(NORM_EPS)
        .sqrt();
    let nx = gx.div(norm)?;
    let ny = gy.div(norm)?;
    let nz = gz.div(norm)?;
    let normals = tape.concat_cols(&[nx, ny, nz])?;
    let d = fields.color_forward(tape, &inputs.pts, &inputs.dirs, normals, sdf.feat)?;

    let (ir, ib) = fields.illum_effective();
    let sq = tape.leaf(inputs.sq.clone(), Shape::Matrix(n, 3))?;
    let c = d
        .mul(sq.mul(ir)?.add_const(1.0))?
        .add(sq.mul(ib)?)?;

    let s = fields.sharpness();
    let f_mat = sdf.f.reshape(Shape::Matrix(inputs.rays, inputs.samples))?;
    let phi = f_mat.mul(s)?.sigmoid();
    let spr = inputs.samples;
    let phi_i = phi.slice_cols(0, spr - 1)?;
    let phi_n = phi.slice_cols(1, spr)?;
    let alpha_main = phi_i
        .sub(phi_n)?
        .div(phi_i.max_const(DENOM_EPS))?
        .max_const(0.0);
    let zeros = tape.leaf(vec![0.0; inputs.rays], Shape::Matrix(inputs.rays, 1))?;
    let alpha = tape.concat_cols(&[alpha_main, zeros])?;

    let trans = alpha.neg().add_const(1.0).cumprod_excl_rows()?;
    let w = trans.mul(alpha)?;
    let opacity = w.sum_rows()?;
    let resid = opacity.neg().add_const(1.0);

    let mut color = Vec::with_capacity(3);
    for ch in 0..3 {
        let c_ch = c
            .slice_cols(ch, ch + 1)?
            .reshape(Shape::Matrix(inputs.rays, spr))?;
        let composited = w.mul(c_ch)?.sum_rows()?;
        color.push(composited.add(resid.scale(cfg.background[ch]))?);
    }
    Ok(TapedChunk {
        color: [color[0], color[1], color[2]],
        opacity,
        grad: [gx, gy, gz],
    })
}

/// Full-frame render: per-pixel ray, prepared samples, plain chunk render.
/// Deterministic for a given seed regardless of chunking or threads.
pub struct ImageRender {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn render_image(
    model: &SceneModel,
    camera: &Camera,
    projectors: &[ProjectorModel],
    cfg: &RenderConfig,
    near: f64,
    far: f64,
    seed: u64,
    illum_override: Option<(f64, f64)>,
) -> Result<ImageRender> {
    cfg.validate()?;
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let illum = illum_override.unwrap_or_else(|| model.illum_values());
    let results = map_chunks(cfg.exec, w * h, cfg.chunk_rays, |range| {
        let mut rays = Vec::with_capacity(range.len());
        for p in range.clone() {
            let (x, y) = (p % w, p / w);
            rays.push(camera.ray_for_pixel(x, y, near, far)?);
        }
        let samples = prepare_samples(model, &rays, cfg, |i, stage| {
            rng::stream(seed, "render", &[(range.start + i) as u64, stage as u64])
        })?;
        let proj_refs: Vec<&[ProjectorModel]> = vec![projectors; samples.len()];
        let inputs = ChunkInputs::assemble(&samples, &proj_refs);
        let ts: Vec<&[f64]> = samples.iter().map(|s| s.ts.as_slice()).collect();
        Ok(render_chunk_plain(model, &inputs, &ts, illum, cfg))
    });
    let mut color = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut opacity = Vec::with_capacity(w * h);
    for chunk in results {
        for ro in chunk? {
            color.extend_from_slice(&ro.color);
            depth.push(ro.depth);
            opacity.push(ro.opacity);
        }
    }
    Ok(ImageRender {
        width: w,
        height: h,
        color,
        depth,
        opacity,
    })
}

/// Pattern-free novel view: the render with effective i_r = i_b = 0.
/// No projector is evaluated.
pub fn render_texture(
    model: &SceneModel,
    camera: &Camera,
    cfg: &RenderConfig,
    near: f64,
    far: f64,
    seed: u64,
) -> Result<ImageRender> {
    render_image(model, camera, &[], cfg, near, far, seed, Some((0.0, 0.0)))
}

/// Single-ray render (plain path).
pub fn render_ray(
    model: &SceneModel,
    ray: &Ray,
    projectors: &[ProjectorModel],
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderOutput> {
    let samples = prepare_samples(model, std::slice::from_ref(ray), cfg, |i, stage| {
        rng::stream(seed, "render", &[i as u64, stage as u64])
    })?;
    let proj_refs: Vec<&[ProjectorModel]> = vec![projectors];
    let inputs = ChunkInputs::assemble(&samples, &proj_refs);
    let ts: Vec<&[f64]> = samples.iter().map(|s| s.ts.as_slice()).collect();
    let illum = model.illum_values();
    Ok(render_chunk_plain(model, &inputs, &ts, illum, cfg)
        .into_iter()
        .next()
        .expect("one ray in, one result out"))
}
