//! Frequency positional encoding: x ↦ [x, sin(2⁰πx), cos(2⁰πx), …,
//! sin(2^{L-1}πx), cos(2^{L-1}πx)], each block spanning all input dims.

use std::f64::consts::PI;

use super::shape::Shape;
use super::tape::{Tape, Var};
use crate::error::Result;

pub fn encoded_dim(dim: usize, num_frequencies: usize) -> usize {
    dim * (1 + 2 * num_frequencies)
}

/// Encodes a batch of `dim`-vectors stored row-major in `x` (n × dim).
pub fn encode_batch(x: &[f64], dim: usize, num_frequencies: usize) -> Vec<f64> {
    let n = x.len() / dim;
    let out_dim = encoded_dim(dim, num_frequencies);
    let mut out = vec![0.0; n * out_dim];
    for i in 0..n {
        let src = &x[i * dim..(i + 1) * dim];
        let dst = &mut out[i * out_dim..(i + 1) * out_dim];
        dst[..dim].copy_from_slice(src);
        let mut at = dim;
        for l in 0..num_frequencies {
            let w = (1u64 << l) as f64 * PI;
            for d in 0..dim {
                dst[at + d] = (w * src[d]).sin();
                dst[at + dim + d] = (w * src[d]).cos();
            }
            at += 2 * dim;
        }
    }
    out
}

/// Column `axis` of the encoding Jacobian at each point of the batch:
/// the tangent of the encoding along input direction e_axis.
pub fn encode_tangent_batch(x: &[f64], dim: usize, num_frequencies: usize, axis: usize) -> Vec<f64> {
    let n = x.len() / dim;
    let out_dim = encoded_dim(dim, num_frequencies);
    let mut out = vec![0.0; n * out_dim];
    for i in 0..n {
        let src = &x[i * dim..(i + 1) * dim];
        let dst = &mut out[i * out_dim..(i + 1) * out_dim];
        dst[axis] = 1.0;
        let mut at = dim;
        for l in 0..num_frequencies {
            let w = (1u64 << l) as f64 * PI;
            dst[at + axis] = w * (w * src[axis]).cos();
            dst[at + dim + axis] = -w * (w * src[axis]).sin();
            at += 2 * dim;
        }
    }
    out
}

/// Taped encoding of an (n × dim) value, built from recorded primitives so
/// it is differentiable with respect to `x`.
pub fn encode_var<'t>(tape: &'t Tape, x: Var<'t>, num_frequencies: usize) -> Result<Var<'t>> {
    let shape = x.shape();
    let (n, dim) = (shape.rows(), shape.cols());
    let x = x.reshape(Shape::Matrix(n, dim))?;
    let mut parts = vec![x];
    for l in 0..num_frequencies {
        let w = (1u64 << l) as f64 * PI;
        let scaled = x.scale(w);
        parts.push(scaled.sin());
        parts.push(scaled.cos());
    }
    tape.concat_cols(&parts)
}
