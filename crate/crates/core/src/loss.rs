//! Training objective: photometric L1 + λ·Eikonal + β·mask BCE.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{Error, Result};

/// Balancing coefficients of the objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Eikonal coefficient λ.
    pub lambda: f64,
    /// Mask coefficient β (0 disables mask supervision).
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            beta: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidArgument(
                "loss weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-batch loss decomposition; total = color + λ·eikonal + β·mask.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub color: f64,
    pub eikonal: f64,
    pub mask: f64,
}

/// Clip bound for the mask BCE logarithms.
pub const BCE_EPS: f64 = 1e-4;

/// Mean absolute difference over all entries. Shapes must agree.
pub fn photometric_l1(rendered: &[f64], truth: &[f64]) -> Result<f64> {
    if rendered.len() != truth.len() || rendered.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "photometric_l1",
            left: vec![rendered.len()],
            right: vec![truth.len()],
        });
    }
    Ok(rendered
        .iter()
        .zip(truth)
        .map(|(r, t)| (r - t).abs())
        .sum::<f64>()
        / rendered.len() as f64)
}

/// Mean squared deviation of gradient norms from one.
pub fn eikonal_loss(grad_norms: &[f64]) -> f64 {
    if grad_norms.is_empty() {
        return 0.0;
    }
    grad_norms.iter().map(|g| (g - 1.0) * (g - 1.0)).sum::<f64>() / grad_norms.len() as f64
}

/// Binary cross-entropy between accumulated ray opacity and mask, with
/// opacities clipped to [BCE_EPS, 1−BCE_EPS] before the logarithm.
pub fn mask_loss(opacities: &[f64], masks: &[f64]) -> Result<f64> {
    if opacities.len() != masks.len() || opacities.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "mask_loss",
            left: vec![opacities.len()],
            right: vec![masks.len()],
        });
    }
    Ok(opacities
        .iter()
        .zip(masks)
        .map(|(o, m)| {
            let oc = o.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(m * oc.ln() + (1.0 - m) * (1.0 - oc).ln())
        })
        .sum::<f64>()
        / opacities.len() as f64)
}

/// Weighted sum and its exact decomposition.
pub fn total_objective(color: f64, eikonal: f64, mask: f64, weights: &LossWeights) -> LossReport {
    LossReport {
        total: color + weights.lambda * eikonal + weights.beta * mask,
        color,
        eikonal,
        mask,
    }
}

/// Taped L1 between per-channel rendered vectors and constant truth.
pub fn photometric_l1_taped<'t>(
    tape: &'t Tape,
    rendered: [Var<'t>; 3],
    truth: &[[f64; 3]],
) -> Result<Var<'t>> {
    let rays = truth.len();
    let mut diffs = Vec::with_capacity(3);
    for (ch, r) in rendered.into_iter().enumerate() {
        let t = tape.leaf(
            truth.iter().map(|px| px[ch]).collect(),
            Shape::Vector(rays),
        )?;
        diffs.push(r.sub(t)?.abs().sum_all());
    }
    // Mean over rays × channels.
    diffs[0]
        .add(diffs[1])?
        .add(diffs[2])?
        .scale(1.0 / (rays * 3) as f64)
        .reshape(Shape::Scalar)
}

/// Taped Eikonal penalty for gradient component columns (n×1 each):
/// mean (‖g‖ − 1)², sharing the norm guard with the renderer.
pub fn eikonal_taped<'t>(grad: &[Var<'t>; 3]) -> Result<Var<'t>> {
    let [gx, gy, gz] = *grad;
    let norm = gx
        .mul(gx)?
        .add(gy.mul(gy)?)?
        .add(gz.mul(gz)?)?
        .add_const(1e-24)
        .sqrt();
    let dev = norm.add_const(-1.0);
    Ok(dev.mul(dev)?.mean_all())
}

/// Taped mask BCE; opacity clipping uses min/max recordings so gradients
/// vanish outside the clip range exactly as in the plain path.
pub fn mask_loss_taped<'t>(tape: &'t Tape, opacity: Var<'t>, masks: &[f64]) -> Result<Var<'t>> {
    let m = tape.leaf(masks.to_vec(), Shape::Vector(masks.len()))?;
    let oc = opacity.max_const(BCE_EPS).min_const(1.0 - BCE_EPS);
    let pos = m.mul(oc.ln())?;
    let neg = m.neg().add_const(1.0).mul(oc.neg().add_const(1.0).ln())?;
    Ok(pos.add(neg)?.mean_all().neg())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let a = vec![0.2, 0.4, 0.6, 0.1, 0.5, 0.9];
        assert_eq!(photometric_l1(&a, &a).unwrap(), 0.0);
        // Constant offset 0.2 on one channel of three.
        let rendered = vec![0.5, 0.5, 0.5];
        let truth = vec![0.3, 0.5, 0.5];
        assert!((photometric_l1(&rendered, &truth).unwrap() - 0.2 / 3.0).abs() < 1e-15);
        assert!(photometric_l1(&a, &a[..3]).is_err());
    }

    #[test]
    fn eikonal_examples() {
        // Unit gradients: zero.
        assert_eq!(eikonal_loss(&[1.0, 1.0, 1.0]), 0.0);
        // Norm 2 everywhere: (2−1)² = 1.
        assert_eq!(eikonal_loss(&[2.0, 2.0]), 1.0);
    }

    #[test]
    fn mask_bce_examples() {
        // Matching opacity/mask is ~0 after clipping.
        assert!(mask_loss(&[1.0], &[1.0]).unwrap() < 2e-4);
        // Opacity 0.5 against mask 1 is ln 2.
        assert!((mask_loss(&[0.5], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        // Symmetry: BCE(o, 1) = BCE(1−o, 0).
        let a = mask_loss(&[0.3], &[1.0]).unwrap();
        let b = mask_loss(&[0.7], &[0.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn objective_decomposition_is_exact() {
        let w = LossWeights {
            lambda: 0.1,
            beta: 0.5,
        };
        let rep = total_objective(0.37, 0.11, 0.23, &w);
        assert!(
            (rep.total - (rep.color + w.lambda * rep.eikonal + w.beta * rep.mask)).abs() < 1e-12
        );
        // β = 0 reduces to color + λ·eikonal.
        let w0 = LossWeights::default();
        let rep0 = total_objective(0.37, 0.11, 9.0, &w0);
        assert!((rep0.total - (0.37 + 0.1 * 0.11)).abs() < 1e-15);
        let z = total_objective(0.0, 0.0, 0.0, &w);
        assert_eq!(z.total, 0.0);
    }

    #[test]
    fn objective_is_affine_in_each_component() {
        let w = LossWeights {
            lambda: 0.25,
            beta: 0.75,
        };
        let base = total_objective(1.0, 2.0, 3.0, &w).total;
        let de = total_objective(1.0, 2.0 + 1.0, 3.0, &w).total - base;
        let dm = total_objective(1.0, 2.0, 3.0 + 1.0, &w).total - base;
        let dc = total_objective(1.0 + 1.0, 2.0, 3.0, &w).total - base;
        assert!((de - 0.25).abs() < 1e-12);
        assert!((dm - 0.75).abs() < 1e-12);
        assert!((dc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn taped_losses_match_plain() {
        let tape = Tape::new();
        let truth = vec![[0.1, 0.2, 0.3], [0.6, 0.5, 0.4]];
        let rendered_plain = [[0.15, 0.1, 0.35], [0.55, 0.65, 0.30]];
        let rendered = [
            tape.leaf(vec![0.15, 0.55], Shape::Vector(2)).unwrap(),
            tape.leaf(vec![0.1, 0.65], Shape::Vector(2)).unwrap(),
            tape.leaf(vec![0.35, 0.30], Shape::Vector(2)).unwrap(),
        ];
        let l1 = photometric_l1_taped(&tape, rendered, &truth).unwrap();
        let flat_r: Vec<f64> = (0..3)
            .flat_map(|ch| rendered_plain.iter().map(move |p| p[ch]))
            .collect();
        let flat_t: Vec<f64> = (0..3)
            .flat_map(|ch| truth.iter().map(move |p| p[ch]))
            .collect();
        assert!((l1.data()[0] - photometric_l1(&flat_r, &flat_t).unwrap()).abs() < 1e-15);

        let opac = tape.leaf(vec![0.5, 0.9], Shape::Vector(2)).unwrap();
        let masks = vec![1.0, 0.0];
        let bce = mask_loss_taped(&tape, opac, &masks).unwrap();
        assert!((bce.data()[0] - mask_loss(&[0.5, 0.9], &masks).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn eikonal_is_rotation_invariant_for_rotated_fields() {
        // A linear field f(x) = a·x composed with a rotation: evaluating
        // f∘R at points X matches evaluating f at RX, and the taped
        // Eikonal agrees to float exactness.
        use crate::autodiff::{Activation, Mlp, MlpArch, MlpInit, ParamSet};
        use nalgebra::{Matrix3, Vector3};

        let arch = MlpArch {
            input_dim: 3,
            hidden_dim: 0,
            hidden_layers: 0,
            output_dim: 1,
            hidden_activation: Activation::None,
            output_activation: Activation::None,
            skip_at: None,
        };
        let mut set_a = ParamSet::new();
        let mut r = crate::rng::stream(3, "eik-rot", &[]);
        let mlp_a = Mlp::register(&mut set_a, "f", arch.clone(), MlpInit::Standard, &mut r).unwrap();
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), 0.7);
        // Compose: weights of f∘R are Rᵀ·w.
        let mut set_b = set_a.clone();
        {
            let w = set_a.slice(mlp_a.weights[0]);
            let wv = Vector3::new(w[0], w[1], w[2]);
            let rw = rot.matrix().transpose() * wv;
            let wb = set_b.slice_mut(mlp_a.weights[0]);
            wb.copy_from_slice(&[rw.x, rw.y, rw.z]);
        }
        let pts: Vec<Vector3<f64>> = (0..8)
            .map(|i| Vector3::new((i as f64).sin(), (i as f64).cos(), 0.3 * i as f64))
            .collect();
        let eval_norms = |set: &ParamSet, pts: &[Vector3<f64>]| -> Vec<f64> {
            pts.iter()
                .map(|p| {
                    let x = [p.x, p.y, p.z];
                    let seeds: Vec<Vec<f64>> = (0..3)
                        .map(|a| {
                            let mut s = vec![0.0; 3];
                            s[a] = 1.0;
                            s
                        })
                        .collect();
                    let (_, t) = mlp_a.forward_plain_with_tangents(set, &x, &seeds, 1);
                    (t[0][0] * t[0][0] + t[1][0] * t[1][0] + t[2][0] * t[2][0]).sqrt()
                })
                .collect()
        };
        let direct: Vec<f64> = eval_norms(&set_a, &pts.iter().map(|p| rot * p).collect::<Vec<_>>());
        let composed: Vec<f64> = eval_norms(&set_b, &pts);
        let la = eikonal_loss(&direct);
        let lb = eikonal_loss(&composed);
        assert!((la - lb).abs() < 1e-12, "{la} vs {lb}");
        let _ = Matrix3::<f64>::identity();
    }
}
