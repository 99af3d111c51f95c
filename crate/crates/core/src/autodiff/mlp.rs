//! Small dense multilayer perceptrons over [`ParamSet`] storage, with a
//! plain (gradient-free) forward and a taped forward that optionally
//! carries input-space tangents for exact spatial gradients.
//!
//! Both paths call the same kernels in the same order, so their outputs
//! are bit-identical for the same parameters.

use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamSet};
use super::shape::Shape;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::normal;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    None,
    Relu,
    /// Softplus with the given sharpness; approaches Relu as beta grows
    /// while keeping a useful second derivative.
    Softplus(f64),
    Sigmoid,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus(beta) => kernels::softplus(x, beta),
            Activation::Sigmoid => kernels::sigmoid(x),
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::None => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus(beta) => kernels::softplus_deriv(x, beta),
            Activation::Sigmoid => {
                let s = kernels::sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    fn apply_var<'t>(&self, z: Var<'t>) -> Var<'t> {
        match *self {
            Activation::None => z,
            Activation::Relu => z.relu(),
            Activation::Softplus(beta) => z.softplus(beta),
            Activation::Sigmoid => z.sigmoid(),
        }
    }

    /// Derivative as a taped value (enables second-order terms to flow).
    /// `None` for the identity, whose derivative is constant one.
    fn deriv_var<'t>(&self, z: Var<'t>) -> Result<Option<Var<'t>>> {
        Ok(match *self {
            Activation::None => None,
            Activation::Relu => Some(z.step()),
            Activation::Softplus(beta) => Some(z.scale(beta).sigmoid()),
            Activation::Sigmoid => {
                let s = z.sigmoid();
                Some(s.mul(s.neg().add_const(1.0))?)
            }
        })
    }
}

/// Architecture of one perceptron: `hidden_layers` hidden maps of width
/// `hidden_dim`, an optional skip connection that re-feeds the raw input
/// at one hidden map, and a final linear map to `output_dim`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub skip_at: Option<usize>,
}

impl MlpArch {
    pub fn num_maps(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn map_in_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else if self.skip_at == Some(i) {
            self.hidden_dim + self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn map_out_dim(&self, i: usize) -> usize {
        if i + 1 == self.num_maps() {
            self.output_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("zero-width mlp layer".into()));
        }
        if self.hidden_layers > 0 && self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("zero-width hidden layer".into()));
        }
        if let Some(s) = self.skip_at {
            if s == 0 || s >= self.num_maps() {
                return Err(Error::InvalidArgument(format!(
                    "skip_at {s} outside hidden map range 1..{}",
                    self.num_maps()
                )));
            }
        }
        Ok(())
    }
}

/// How to initialize the weights at registration.
pub enum MlpInit {
    /// Zero-mean Gaussians scaled by fan-in; biases zero.
    Standard,
    /// Initialization biasing the net toward the signed distance of a
    /// sphere with the given radius (head output ≈ ‖x‖ − radius).
    /// `raw_dim` is the count of leading un-encoded input dims.
    Geometric { radius: f64, raw_dim: usize },
}

/// Parameter handles of one registered perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub arch: MlpArch,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl Mlp {
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        arch: MlpArch,
        init: MlpInit,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        arch.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..arch.num_maps() {
            let (din, dout) = (arch.map_in_dim(i), arch.map_out_dim(i));
            let mut w = vec![0.0; din * dout];
            let mut b = vec![0.0; dout];
            match init {
                MlpInit::Standard => {
                    let std = (2.0 / din as f64).sqrt();
                    for v in w.iter_mut() {
                        *v = normal(rng) * std;
                    }
                }
                MlpInit::Geometric { radius, raw_dim } => {
                    init_geometric(&arch, i, din, dout, radius, raw_dim, &mut w, &mut b, rng)
                }
            }
            weights.push(set.register(format!("{prefix}.l{i}.w"), Shape::Matrix(din, dout), w));
            biases.push(set.register(format!("{prefix}.l{i}.b"), Shape::Vector(dout), b));
        }
        Ok(Mlp {
            arch,
            weights,
            biases,
        })
    }

    /// Gradient-free batched forward: `x` is (n × input_dim) row-major.
    pub fn forward_plain(&self, set: &ParamSet, x: &[f64], n: usize) -> Vec<f64> {
        let arch = &self.arch;
        debug_assert_eq!(x.len(), n * arch.input_dim);
        let mut h = x.to_vec();
        let mut h_dim = arch.input_dim;
        for i in 0..arch.num_maps() {
            if arch.skip_at == Some(i) {
                let mut cat = vec![0.0; n * (h_dim + arch.input_dim)];
                let w = h_dim + arch.input_dim;
                for r in 0..n {
                    cat[r * w..r * w + h_dim].copy_from_slice(&h[r * h_dim..(r + 1) * h_dim]);
                    cat[r * w + h_dim..(r + 1) * w]
                        .copy_from_slice(&x[r * arch.input_dim..(r + 1) * arch.input_dim]);
                }
                h = cat;
                h_dim = w;
            }
            let dout = arch.map_out_dim(i);
            let mut z = vec![0.0; n * dout];
            kernels::gemm_nn(&h, set.slice(self.weights[i]), &mut z, n, h_dim, dout);
            let bias = set.slice(self.biases[i]);
            for r in 0..n {
                for c in 0..dout {
                    z[r * dout + c] += bias[c];
                }
            }
            let act = if i + 1 == arch.num_maps() {
                arch.output_activation
            } else {
                arch.hidden_activation
            };
            for v in z.iter_mut() {
                *v = act.apply(*v);
            }
            h = z;
            h_dim = dout;
        }
        h
    }

    /// Activations entering the final linear map (after any skip concat)
    /// and their width.
    pub fn penultimate(&self, set: &ParamSet, x: &[f64], n: usize) -> (Vec<f64>, usize) {
        let arch = &self.arch;
        let mut h = x.to_vec();
        let mut h_dim = arch.input_dim;
        for i in 0..arch.num_maps() - 1 {
            if arch.skip_at == Some(i) {
                let w = h_dim + arch.input_dim;
                let mut cat = vec![0.0; n * w];
                for r in 0..n {
                    cat[r * w..r * w + h_dim].copy_from_slice(&h[r * h_dim..(r + 1) * h_dim]);
                    cat[r * w + h_dim..(r + 1) * w]
                        .copy_from_slice(&x[r * arch.input_dim..(r + 1) * arch.input_dim]);
                }
                h = cat;
                h_dim = w;
            }
            let dout = arch.map_out_dim(i);
            let mut z = vec![0.0; n * dout];
            kernels::gemm_nn(&h, set.slice(self.weights[i]), &mut z, n, h_dim, dout);
            let bias = set.slice(self.biases[i]);
            for r in 0..n {
                for c in 0..dout {
                    z[r * dout + c] += bias[c];
                }
            }
            for v in z.iter_mut() {
                *v = arch.hidden_activation.apply(*v);
            }
            h = z;
            h_dim = dout;
        }
        if arch.skip_at == Some(arch.num_maps() - 1) {
            let w = h_dim + arch.input_dim;
            let mut cat = vec![0.0; n * w];
            for r in 0..n {
                cat[r * w..r * w + h_dim].copy_from_slice(&h[r * h_dim..(r + 1) * h_dim]);
                cat[r * w + h_dim..(r + 1) * w]
                    .copy_from_slice(&x[r * arch.input_dim..(r + 1) * arch.input_dim]);
            }
            h = cat;
            h_dim = w;
        }
        (h, h_dim)
    }

    /// Plain forward that also propagates one tangent per listed input
    /// direction (columns of a seed matrix per tangent). Returns
    /// (output, tangent outputs).
    pub fn forward_plain_with_tangents(
        &self,
        set: &ParamSet,
        x: &[f64],
        tangents: &[Vec<f64>],
        n: usize,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let arch = &self.arch;
        let mut h = x.to_vec();
        let mut t: Vec<Vec<f64>> = tangents.to_vec();
        let mut h_dim = arch.input_dim;
        for i in 0..arch.num_maps() {
            if arch.skip_at == Some(i) {
                let w = h_dim + arch.input_dim;
                let cat_with = |cur: &[f64], orig: &[f64]| {
                    let mut cat = vec![0.0; n * w];
                    for r in 0..n {
                        cat[r * w..r * w + h_dim].copy_from_slice(&cur[r * h_dim..(r + 1) * h_dim]);
                        cat[r * w + h_dim..(r + 1) * w]
                            .copy_from_slice(&orig[r * arch.input_dim..(r + 1) * arch.input_dim]);
                    }
                    cat
                };
                h = cat_with(&h, x);
                t = t
                    .iter()
                    .enumerate()
                    .map(|(k, tk)| cat_with(tk, &tangents[k]))
                    .collect();
                h_dim = w;
            }
            let dout = arch.map_out_dim(i);
            let wmat = set.slice(self.weights[i]);
            let bias = set.slice(self.biases[i]);
            let mut z = vec![0.0; n * dout];
            kernels::gemm_nn(&h, wmat, &mut z, n, h_dim, dout);
            for r in 0..n {
                for c in 0..dout {
                    z[r * dout + c] += bias[c];
                }
            }
            let mut tz: Vec<Vec<f64>> = t
                .iter()
                .map(|tk| {
                    let mut out = vec![0.0; n * dout];
                    kernels::gemm_nn(tk, wmat, &mut out, n, h_dim, dout);
                    out
                })
                .collect();
            let act = if i + 1 == arch.num_maps() {
                arch.output_activation
            } else {
                arch.hidden_activation
            };
            for tk in tz.iter_mut() {
                for (v, zv) in tk.iter_mut().zip(z.iter()) {
                    *v *= act.deriv(*zv);
                }
            }
            for v in z.iter_mut() {
                *v = act.apply(*v);
            }
            h = z;
            t = tz;
            h_dim = dout;
        }
        (h, t)
    }

    /// Taped forward. `leaves` are the tape handles from
    /// [`ParamSet::register_leaves`].
    pub fn forward_taped<'t>(
        &self,
        tape: &'t Tape,
        leaves: &[Var<'t>],
        x: Var<'t>,
    ) -> Result<Var<'t>> {
        Ok(self.forward_taped_with_tangents(tape, leaves, x, &[])?.0)
    }

    /// Taped forward carrying tangent values recorded on the same tape;
    /// gradients of anything computed from the tangent outputs flow back
    /// into the weights (forward-over-reverse).
    pub fn forward_taped_with_tangents<'t>(
        &self,
        tape: &'t Tape,
        leaves: &[Var<'t>],
        x: Var<'t>,
        tangents: &[Var<'t>],
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let arch = &self.arch;
        let mut h = x;
        let mut t: Vec<Var<'t>> = tangents.to_vec();
        for i in 0..arch.num_maps() {
            if arch.skip_at == Some(i) {
                h = tape.concat_cols(&[h, x])?;
                t = t
                    .iter()
                    .enumerate()
                    .map(|(k, tk)| tape.concat_cols(&[*tk, tangents[k]]))
                    .collect::<Result<_>>()?;
            }
            let w = leaves[self.weights[i].0];
            let b = leaves[self.biases[i].0];
            let z = h.matmul(w)?.add(b)?;
            let tz: Vec<Var<'t>> = t
                .iter()
                .map(|tk| tk.matmul(w))
                .collect::<Result<_>>()?;
            let act = if i + 1 == arch.num_maps() {
                arch.output_activation
            } else {
                arch.hidden_activation
            };
            t = if tz.is_empty() {
                tz
            } else {
                match act.deriv_var(z)? {
                    None => tz,
                    Some(d) => tz
                        .into_iter()
                        .map(|tk| tk.mul(d))
                        .collect::<Result<_>>()?,
                }
            };
            h = act.apply_var(z);
        }
        Ok((h, t))
    }
}

#[allow(clippy::too_many_arguments)]
fn init_geometric(
    arch: &MlpArch,
    map: usize,
    din: usize,
    dout: usize,
    radius: f64,
    raw_dim: usize,
    w: &mut [f64],
    b: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    let last = map + 1 == arch.num_maps();
    if last {
        // Head column gets a positive mean so the pre-activation sums
        // approximate ‖x‖; remaining (feature) columns start small.
        let mean = std::f64::consts::PI.sqrt() / (din as f64).sqrt();
        for r in 0..din {
            for c in 0..dout {
                w[r * dout + c] = if c == 0 {
                    mean + normal(rng) * 1e-4
                } else {
                    normal(rng) * (2.0 / din as f64).sqrt() * 1e-2
                };
            }
        }
        b[0] = -radius;
        return;
    }
    let std = (2.0 / dout as f64).sqrt();
    for v in w.iter_mut() {
        *v = normal(rng) * std;
    }
    if map == 0 && arch.input_dim > raw_dim {
        // Encoded slots start dark so the init sees raw coordinates only.
        for r in raw_dim..din {
            for c in 0..dout {
                w[r * dout + c] = 0.0;
            }
        }
    }
    if arch.skip_at == Some(map) {
        for r in arch.hidden_dim + raw_dim..din {
            for c in 0..dout {
                w[r * dout + c] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn smoke_arch() -> MlpArch {
        MlpArch {
            input_dim: 5,
            hidden_dim: 8,
            hidden_layers: 2,
            output_dim: 3,
            hidden_activation: Activation::Softplus(100.0),
            output_activation: Activation::None,
            skip_at: Some(1),
        }
    }

    #[test]
    fn plain_and_taped_forward_are_bit_identical() {
        let mut set = ParamSet::new();
        let mut r = rng::stream(1, "test", &[]);
        let mlp = Mlp::register(&mut set, "m", smoke_arch(), MlpInit::Standard, &mut r).unwrap();
        let n = 4;
        let x: Vec<f64> = (0..n * 5).map(|i| ((i as f64) * 0.37).sin()).collect();
        let plain = mlp.forward_plain(&set, &x, n);

        let tape = Tape::new();
        let leaves = set.register_leaves(&tape).unwrap();
        let xv = tape.leaf(x.clone(), Shape::Matrix(n, 5)).unwrap();
        let out = mlp.forward_taped(&tape, &leaves, xv).unwrap();
        assert_eq!(out.data(), plain);
    }

    #[test]
    fn tangents_match_between_plain_and_taped() {
        let mut set = ParamSet::new();
        let mut r = rng::stream(2, "test", &[]);
        let mlp = Mlp::register(&mut set, "m", smoke_arch(), MlpInit::Standard, &mut r).unwrap();
        let n = 3;
        let x: Vec<f64> = (0..n * 5).map(|i| ((i as f64) * 0.73).cos()).collect();
        let seed: Vec<f64> = (0..n * 5).map(|i| if i % 5 == 2 { 1.0 } else { 0.0 }).collect();

        let (out_p, tan_p) = mlp.forward_plain_with_tangents(&set, &x, &[seed.clone()], n);

        let tape = Tape::new();
        let leaves = set.register_leaves(&tape).unwrap();
        let xv = tape.leaf(x, Shape::Matrix(n, 5)).unwrap();
        let sv = tape.leaf(seed, Shape::Matrix(n, 5)).unwrap();
        let (out_t, tan_t) = mlp
            .forward_taped_with_tangents(&tape, &leaves, xv, &[sv])
            .unwrap();
        assert_eq!(out_t.data(), out_p);
        assert_eq!(tan_t[0].data(), tan_p[0]);
    }

    #[test]
    fn tangent_is_directional_derivative() {
        let mut set = ParamSet::new();
        let mut r = rng::stream(3, "test", &[]);
        let arch = MlpArch {
            input_dim: 3,
            hidden_dim: 16,
            hidden_layers: 2,
            output_dim: 1,
            hidden_activation: Activation::Softplus(100.0),
            output_activation: Activation::None,
            skip_at: None,
        };
        let mlp = Mlp::register(&mut set, "m", arch, MlpInit::Standard, &mut r).unwrap();
        let x = vec![0.21, -0.53, 0.77];
        let dir = vec![0.0, 1.0, 0.0];
        let (_, tan) = mlp.forward_plain_with_tangents(&set, &x, &[dir], 1);
        let h = 1e-6;
        let xp = vec![x[0], x[1] + h, x[2]];
        let xm = vec![x[0], x[1] - h, x[2]];
        let fp = mlp.forward_plain(&set, &xp, 1)[0];
        let fm = mlp.forward_plain(&set, &xm, 1)[0];
        let fd = (fp - fm) / (2.0 * h);
        assert!((tan[0][0] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}
