//! Reverse-mode autodiff over dense f64 arrays.
//!
//! Operations executed through a [`Tape`] are recorded in topological
//! order; [`Tape::backward`] replays them in reverse and accumulates
//! adjoints. Recording is single-writer by construction (`&Tape` with
//! interior mutability, not `Sync`), one tape per thread.

use std::cell::RefCell;

use super::shape::{broadcast, Broadcast, Shape};
use crate::error::{Error, Result};
use crate::kernels;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId, Broadcast),
    Div(NodeId, NodeId, Broadcast),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Relu(NodeId),
    Step(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    PowConst(NodeId, f64),
    MaxConst(NodeId, f64),
    MinConst(NodeId, f64),
    Matmul(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumRows(NodeId),
    CumprodExclRows(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
}

struct Node {
    shape: Shape,
    data: Vec<f64>,
    op: Op,
}

/// Elementwise op kinds accepted by [`Tape::record_elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    MaxConst(f64),
    Relu,
    Sigmoid,
    Sin,
    Cos,
    Exp,
    Pow(f64),
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Shape, data: Vec<f64>, op: Op) -> Var<'_> {
        debug_assert_eq!(shape.numel(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, data, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Registers a leaf value. Leaves receive gradients on backward.
    pub fn leaf(&self, data: Vec<f64>, shape: Shape) -> Result<Var<'_>> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidArgument(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape.dims()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf))
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(Shape::Scalar, vec![v], Op::Leaf)
    }

    pub fn value(&self, v: Var<'_>) -> Vec<f64> {
        self.nodes.borrow()[v.id].data.clone()
    }

    pub fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.nodes.borrow()[id].data)
    }

    pub fn shape_of(&self, v: Var<'_>) -> Shape {
        self.nodes.borrow()[v.id].shape
    }

    /// Gradient of the last [`Tape::backward`] root with respect to `v`.
    /// Zero for values the root does not depend on.
    pub fn grad(&self, v: Var<'_>) -> Vec<f64> {
        let grads = self.grads.borrow();
        match grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes.borrow()[v.id].shape.numel()],
        }
    }

    /// Elementwise dispatch by op kind; the method API below is the
    /// ergonomic layer over the same recordings.
    pub fn record_elementwise<'t>(&'t self, op: ElemOp, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let need = match op {
            ElemOp::Add | ElemOp::Sub | ElemOp::Mul | ElemOp::Div => 2,
            _ => 1,
        };
        if inputs.len() != need {
            return Err(Error::InvalidArgument(format!(
                "{op:?} expects {need} inputs, got {}",
                inputs.len()
            )));
        }
        match op {
            ElemOp::Add => inputs[0].add(inputs[1]),
            ElemOp::Sub => inputs[0].sub(inputs[1]),
            ElemOp::Mul => inputs[0].mul(inputs[1]),
            ElemOp::Div => inputs[0].div(inputs[1]),
            ElemOp::MaxConst(c) => Ok(inputs[0].max_const(c)),
            ElemOp::Relu => Ok(inputs[0].relu()),
            ElemOp::Sigmoid => Ok(inputs[0].sigmoid()),
            ElemOp::Sin => Ok(inputs[0].sin()),
            ElemOp::Cos => Ok(inputs[0].cos()),
            ElemOp::Exp => Ok(inputs[0].exp()),
            ElemOp::Pow(e) => Ok(inputs[0].pow_const(e)),
        }
    }

    /// Concatenates rank-2 values along columns. Row counts must agree.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero parts".into()));
        }
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].shape.rows();
        let mut cols = 0;
        for p in parts {
            let s = nodes[p.id].shape;
            if s.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![rows, 0],
                    right: s.dims(),
                });
            }
            cols += s.cols();
        }
        let mut data = vec![0.0; rows * cols];
        let mut at = 0;
        for p in parts {
            let s = nodes[p.id].shape;
            let c = s.cols();
            let src = &nodes[p.id].data;
            for r in 0..rows {
                data[r * cols + at..r * cols + at + c].copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            at += c;
        }
        drop(nodes);
        Ok(self.push(
            Shape::Matrix(rows, cols),
            data,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        ))
    }

    /// Reverse pass from a scalar root. Gradients of a previous backward
    /// on the same tape are discarded.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].shape != Shape::Scalar {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].shape.dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            match node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b, bc) => {
                    accumulate_bc(&mut grads, &nodes, a, &g, bc, SIDE_LEFT);
                    accumulate_bc(&mut grads, &nodes, b, &g, bc, SIDE_RIGHT);
                }
                Op::Sub(a, b, bc) => {
                    accumulate_bc(&mut grads, &nodes, a, &g, bc, SIDE_LEFT);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate_bc(&mut grads, &nodes, b, &neg, bc, SIDE_RIGHT);
                }
                Op::Mul(a, b, bc) => {
                    let da = apply_bc(&g, &nodes[a].data, &nodes[b].data, bc, |g, _, bv| g * bv);
                    accumulate_bc(&mut grads, &nodes, a, &da, bc, SIDE_LEFT);
                    let db = apply_bc(&g, &nodes[a].data, &nodes[b].data, bc, |g, av, _| g * av);
                    accumulate_bc(&mut grads, &nodes, b, &db, bc, SIDE_RIGHT);
                }
                Op::Div(a, b, bc) => {
                    let da = apply_bc(&g, &nodes[a].data, &nodes[b].data, bc, |g, _, bv| g / bv);
                    accumulate_bc(&mut grads, &nodes, a, &da, bc, SIDE_LEFT);
                    let out = &node.data;
                    // d(a/b)/db = -out/b, evaluated per broadcast element.
                    let db: Vec<f64> = match bc {
                        Broadcast::Same | Broadcast::ScalarLeft => g
                            .iter()
                            .zip(out.iter().zip(expand(&nodes[b].data, out.len())))
                            .map(|(gv, (ov, bv))| -gv * ov / bv)
                            .collect(),
                        Broadcast::ScalarRight | Broadcast::RowRight => {
                            let bvals = &nodes[b].data;
                            let cols = node.shape.cols();
                            g.iter()
                                .enumerate()
                                .map(|(i, gv)| {
                                    let bv = if bc == Broadcast::ScalarRight {
                                        bvals[0]
                                    } else {
                                        bvals[i % cols]
                                    };
                                    -gv * out[i] / bv
                                })
                                .collect()
                        }
                    };
                    accumulate_bc(&mut grads, &nodes, b, &db, bc, SIDE_RIGHT);
                }
                Op::Neg(a) => accumulate_map(&mut grads, &nodes, a, &g, |g| -g),
                Op::Scale(a, c) => accumulate_map(&mut grads, &nodes, a, &g, |g| g * c),
                Op::AddConst(a) => accumulate_map(&mut grads, &nodes, a, &g, |g| g),
                Op::Relu(a) => {
                    accumulate_zip(&mut grads, &nodes, a, &g, |g, x| if x > 0.0 { g } else { 0.0 })
                }
                // Heaviside step: zero derivative almost everywhere.
                Op::Step(a) => accumulate_map(&mut grads, &nodes, a, &g, |_| 0.0),
                Op::Sigmoid(a) => {
                    let out = node.data.clone();
                    accumulate_with(&mut grads, a, g.len(), |acc| {
                        for i in 0..g.len() {
                            acc[i] += g[i] * out[i] * (1.0 - out[i]);
                        }
                    });
                }
                Op::Softplus(a, beta) => accumulate_zip(&mut grads, &nodes, a, &g, move |g, x| {
                    g * kernels::softplus_deriv(x, beta)
                }),
                Op::Sin(a) => accumulate_zip(&mut grads, &nodes, a, &g, |g, x| g * x.cos()),
                Op::Cos(a) => accumulate_zip(&mut grads, &nodes, a, &g, |g, x| -g * x.sin()),
                Op::Exp(a) => {
                    let out = node.data.clone();
                    accumulate_with(&mut grads, a, g.len(), |acc| {
                        for i in 0..g.len() {
                            acc[i] += g[i] * out[i];
                        }
                    });
                }
                Op::Ln(a) => accumulate_zip(&mut grads, &nodes, a, &g, |g, x| g / x),
                Op::Sqrt(a) => {
                    let out = node.data.clone();
                    accumulate_with(&mut grads, a, g.len(), |acc| {
                        for i in 0..g.len() {
                            acc[i] += g[i] * 0.5 / out[i];
                        }
                    });
                }
                Op::Abs(a) => accumulate_zip(&mut grads, &nodes, a, &g, |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
                Op::PowConst(a, e) => {
                    accumulate_zip(&mut grads, &nodes, a, &g, move |g, x| g * e * x.powf(e - 1.0))
                }
                Op::MaxConst(a, c) => {
                    accumulate_zip(&mut grads, &nodes, a, &g, move |g, x| if x > c { g } else { 0.0 })
                }
                Op::MinConst(a, c) => {
                    accumulate_zip(&mut grads, &nodes, a, &g, move |g, x| if x < c { g } else { 0.0 })
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (nodes[a].shape.rows(), nodes[a].shape.cols());
                    let n = nodes[b].shape.cols();
                    let mut da = vec![0.0; m * k];
                    kernels::gemm_nt(&g, &nodes[b].data, &mut da, m, n, k);
                    accumulate_raw(&mut grads, a, &da);
                    let mut db = vec![0.0; k * n];
                    kernels::gemm_tn(&nodes[a].data, &g, &mut db, k, m, n);
                    accumulate_raw(&mut grads, b, &db);
                }
                Op::SumAll(a) => {
                    let n = nodes[a].shape.numel();
                    accumulate_with(&mut grads, a, n, |acc| {
                        for v in acc.iter_mut() {
                            *v += g[0];
                        }
                    });
                }
                Op::MeanAll(a) => {
                    let n = nodes[a].shape.numel();
                    let gv = g[0] / n as f64;
                    accumulate_with(&mut grads, a, n, |acc| {
                        for v in acc.iter_mut() {
                            *v += gv;
                        }
                    });
                }
                Op::SumRows(a) => {
                    let (r, c) = (nodes[a].shape.rows(), nodes[a].shape.cols());
                    accumulate_with(&mut grads, a, r * c, |acc| {
                        for i in 0..r {
                            for j in 0..c {
                                acc[i * c + j] += g[i];
                            }
                        }
                    });
                }
                Op::CumprodExclRows(a) => {
                    let (r, c) = (nodes[a].shape.rows(), nodes[a].shape.cols());
                    let x = nodes[a].data.clone();
                    let y = node.data.clone();
                    // y[i] = prod_{j<i} x[j] per row; d/dx[j] = y[j] * sum_{i>j} g[i] prod_{j<k<i} x[k],
                    // accumulated right-to-left without division.
                    accumulate_with(&mut grads, a, r * c, |acc| {
                        for row in 0..r {
                            let xs = &x[row * c..(row + 1) * c];
                            let ys = &y[row * c..(row + 1) * c];
                            let gs = &g[row * c..(row + 1) * c];
                            let mut run = 0.0;
                            for j in (0..c).rev() {
                                if j + 1 < c {
                                    run = gs[j + 1] + xs[j + 1] * run;
                                }
                                acc[row * c + j] += ys[j] * run;
                            }
                        }
                    });
                }
                Op::SliceCols(a, start, end) => {
                    let (r, c) = (nodes[a].shape.rows(), nodes[a].shape.cols());
                    let w = end - start;
                    accumulate_with(&mut grads, a, r * c, |acc| {
                        for i in 0..r {
                            for j in 0..w {
                                acc[i * c + start + j] += g[i * w + j];
                            }
                        }
                    });
                }
                Op::ConcatCols(ref parts) => {
                    let rows = node.shape.rows();
                    let cols = node.shape.cols();
                    let mut at = 0;
                    for &p in parts {
                        let c = nodes[p].shape.cols();
                        let n = nodes[p].shape.numel();
                        let start = at;
                        accumulate_with(&mut grads, p, n, |acc| {
                            for r_ in 0..rows {
                                for j in 0..c {
                                    acc[r_ * c + j] += g[r_ * cols + start + j];
                                }
                            }
                        });
                        at += c;
                    }
                }
                Op::Reshape(a) => accumulate_raw(&mut grads, a, &g),
            }
            // Interior node: restore its own gradient slot for inspection.
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

const SIDE_LEFT: bool = true;
const SIDE_RIGHT: bool = false;

/// Reduce an output-shaped gradient into operand `target`'s shape given
/// the broadcast that produced the output.
fn accumulate_bc(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    target: NodeId,
    g_out: &[f64],
    bc: Broadcast,
    is_left: bool,
) {
    let tshape = nodes[target].shape;
    let n = tshape.numel();
    let reduce_all = matches!(
        (bc, is_left),
        (Broadcast::ScalarLeft, true) | (Broadcast::ScalarRight, false)
    );
    let reduce_rows = bc == Broadcast::RowRight && !is_left;
    accumulate_with(grads, target, n, |acc| {
        if reduce_all {
            acc[0] += g_out.iter().sum::<f64>();
        } else if reduce_rows {
            let c = n;
            for (i, gv) in g_out.iter().enumerate() {
                acc[i % c] += gv;
            }
        } else {
            for i in 0..n {
                acc[i] += g_out[i];
            }
        }
    });
}

/// Elementwise combine of output gradient with both operand values,
/// expanded to the output shape.
fn apply_bc(
    g: &[f64],
    a: &[f64],
    b: &[f64],
    bc: Broadcast,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            let av = match bc {
                Broadcast::ScalarLeft => a[0],
                _ => a[i],
            };
            let bv = match bc {
                Broadcast::ScalarRight => b[0],
                Broadcast::RowRight => b[i % b.len()],
                Broadcast::ScalarLeft | Broadcast::Same => b[i],
            };
            f(g[i], av, bv)
        })
        .collect()
}

fn expand<'a>(b: &'a [f64], n: usize) -> impl Iterator<Item = f64> + 'a {
    (0..n).map(move |i| b[i % b.len()])
}

fn accumulate_with(
    grads: &mut [Option<Vec<f64>>],
    target: NodeId,
    numel: usize,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[target].get_or_insert_with(|| vec![0.0; numel]);
    f(slot);
}

fn accumulate_raw(grads: &mut [Option<Vec<f64>>], target: NodeId, contrib: &[f64]) {
    accumulate_with(grads, target, contrib.len(), |acc| {
        for i in 0..contrib.len() {
            acc[i] += contrib[i];
        }
    });
}

fn accumulate_map(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    target: NodeId,
    g: &[f64],
    f: impl Fn(f64) -> f64,
) {
    let n = nodes[target].shape.numel();
    accumulate_with(grads, target, n, |acc| {
        for i in 0..n {
            acc[i] += f(g[i]);
        }
    });
}

fn accumulate_zip(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    target: NodeId,
    g: &[f64],
    f: impl Fn(f64, f64) -> f64,
) {
    let x = &nodes[target].data;
    let n = x.len();
    accumulate_with(grads, target, n, |acc| {
        for i in 0..n {
            acc[i] += f(g[i], x[i]);
        }
    });
}

impl<'t> Var<'t> {
    pub fn data(self) -> Vec<f64> {
        self.tape.value(self)
    }

    pub fn shape(self) -> Shape {
        self.tape.shape_of(self)
    }

    pub fn grad(self) -> Vec<f64> {
        self.tape.grad(self)
    }

    fn binary(
        self,
        o: Var<'t>,
        name: &'static str,
        make: impl Fn(NodeId, NodeId, Broadcast) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), o.shape());
        let (out_shape, bc) = broadcast(name, sa, sb)?;
        let data = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].data;
            let b = &nodes[o.id].data;
            let n = out_shape.numel();
            let cols = out_shape.cols();
            (0..n)
                .map(|i| {
                    let av = if bc == Broadcast::ScalarLeft { a[0] } else { a[i] };
                    let bv = match bc {
                        Broadcast::Same | Broadcast::ScalarLeft => b[i],
                        Broadcast::ScalarRight => b[0],
                        Broadcast::RowRight => b[i % cols],
                    };
                    f(av, bv)
                })
                .collect()
        };
        Ok(self.tape.push(out_shape, data, make(self.id, o.id, bc)))
    }

    pub fn add(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "div", Op::Div, |a, b| a / b)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape, n.data.iter().map(|&x| f(x)).collect())
        };
        self.tape.push(shape, data, op)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.id), |x| x + c)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// Heaviside step (1 where x > 0). Used as the rectifier's derivative
    /// in forward-over-reverse gradient propagation.
    pub fn step(self) -> Var<'t> {
        self.unary(Op::Step(self.id), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), kernels::sigmoid)
    }

    pub fn softplus(self, beta: f64) -> Var<'t> {
        self.unary(Op::Softplus(self.id, beta), |x| kernels::softplus(x, beta))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f64::cos)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn pow_const(self, e: f64) -> Var<'t> {
        self.unary(Op::PowConst(self.id, e), |x| x.powf(e))
    }

    pub fn max_const(self, c: f64) -> Var<'t> {
        self.unary(Op::MaxConst(self.id, c), |x| x.max(c))
    }

    pub fn min_const(self, c: f64) -> Var<'t> {
        self.unary(Op::MinConst(self.id, c), |x| x.min(c))
    }

    /// (m×k)·(k×n) matrix product.
    pub fn matmul(self, o: Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), o.shape());
        match (sa, sb) {
            (Shape::Matrix(m, k), Shape::Matrix(k2, n)) if k == k2 => {
                let mut data = vec![0.0; m * n];
                {
                    let nodes = self.tape.nodes.borrow();
                    kernels::gemm_nn(&nodes[self.id].data, &nodes[o.id].data, &mut data, m, k, n);
                }
                Ok(self
                    .tape
                    .push(Shape::Matrix(m, n), data, Op::Matmul(self.id, o.id)))
            }
            _ => Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.dims(),
                right: sb.dims(),
            }),
        }
    }

    pub fn sum_all(self) -> Var<'t> {
        let s: f64 = self.tape.with_value(self.id, |d| d.iter().sum());
        self.tape.push(Shape::Scalar, vec![s], Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'t> {
        let (s, n) = self
            .tape
            .with_value(self.id, |d| (d.iter().sum::<f64>(), d.len()));
        self.tape
            .push(Shape::Scalar, vec![s / n as f64], Op::MeanAll(self.id))
    }

    /// (r×c) → vector of r row sums.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        match self.shape() {
            Shape::Matrix(r, c) => {
                let data = self.tape.with_value(self.id, |d| {
                    (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect()
                });
                Ok(self
                    .tape
                    .push(Shape::Vector(r), data, Op::SumRows(self.id)))
            }
            s => Err(Error::ShapeMismatch {
                op: "sum_rows",
                left: s.dims(),
                right: vec![],
            }),
        }
    }

    /// Exclusive running product along each row: out[i] = prod of x[..i].
    pub fn cumprod_excl_rows(self) -> Result<Var<'t>> {
        match self.shape() {
            Shape::Matrix(r, c) => {
                let data = self.tape.with_value(self.id, |d| {
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let mut acc = 1.0;
                        for j in 0..c {
                            out[i * c + j] = acc;
                            acc *= d[i * c + j];
                        }
                    }
                    out
                });
                Ok(self
                    .tape
                    .push(Shape::Matrix(r, c), data, Op::CumprodExclRows(self.id)))
            }
            s => Err(Error::ShapeMismatch {
                op: "cumprod_excl_rows",
                left: s.dims(),
                right: vec![],
            }),
        }
    }

    /// Columns `start..end` of a rank-2 value.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        match self.shape() {
            Shape::Matrix(r, c) if start < end && end <= c => {
                let w = end - start;
                let data = self.tape.with_value(self.id, |d| {
                    let mut out = vec![0.0; r * w];
                    for i in 0..r {
                        out[i * w..(i + 1) * w]
                            .copy_from_slice(&d[i * c + start..i * c + end]);
                    }
                    out
                });
                Ok(self
                    .tape
                    .push(Shape::Matrix(r, w), data, Op::SliceCols(self.id, start, end)))
            }
            s => Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{end} invalid for shape {:?}",
                s.dims()
            ))),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Var<'t>> {
        if shape.numel() != self.shape().numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape().dims(),
                right: shape.dims(),
            });
        }
        let data = self.data();
        Ok(self.tape.push(shape, data, Op::Reshape(self.id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_and_relu_negative_branch() {
        let t = Tape::new();
        let x = t.scalar(0.0);
        assert_eq!(x.sigmoid().data(), vec![0.5]);
        let y = t.scalar(-3.2);
        assert_eq!(y.relu().data(), vec![0.0]);
    }

    #[test]
    fn product_rule_grads() {
        let t = Tape::new();
        let x = t.scalar(2.0);
        let y = t.scalar(3.0);
        let z = x.mul(y).unwrap();
        t.backward(z).unwrap();
        assert_eq!(x.grad(), vec![3.0]);
        assert_eq!(y.grad(), vec![2.0]);
    }

    #[test]
    fn unreachable_leaf_grad_is_zero() {
        let t = Tape::new();
        let x = t.scalar(2.0);
        let y = t.scalar(5.0);
        let z = x.mul(x).unwrap();
        t.backward(z).unwrap();
        assert_eq!(y.grad(), vec![0.0]);
        assert_eq!(x.grad(), vec![4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], Shape::Vector(2)).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn identity_matmul_and_ones_dot() {
        let t = Tape::new();
        let eye = t
            .leaf(
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                Shape::Matrix(3, 3),
            )
            .unwrap();
        let m = t
            .leaf(
                vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0],
                Shape::Matrix(3, 3),
            )
            .unwrap();
        let prod = eye.matmul(m).unwrap();
        assert_eq!(prod.data(), m.data());

        let k = 7;
        let row = t.leaf(vec![1.0; k], Shape::Matrix(1, k)).unwrap();
        let col = t.leaf(vec![1.0; k], Shape::Matrix(k, 1)).unwrap();
        let dot = row.matmul(col).unwrap();
        assert_eq!(dot.data(), vec![k as f64]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let t = Tape::new();
        let a = t.leaf(vec![0.0; 6], Shape::Matrix(2, 3)).unwrap();
        let b = t.leaf(vec![0.0; 4], Shape::Matrix(2, 2)).unwrap();
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // z = x*x + x → dz/dx = 2x + 1
        let t = Tape::new();
        let x = t.scalar(3.0);
        let z = x.mul(x).unwrap().add(x).unwrap();
        t.backward(z).unwrap();
        assert_eq!(x.grad(), vec![7.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let t = Tape::new();
        let x = t.leaf(vec![0.3, -1.7, 2.2], Shape::Vector(3)).unwrap();
        let y = x.sigmoid().mul(x.sin()).unwrap().sum_all();
        t.backward(y).unwrap();
        let g1 = x.grad();
        t.backward(y).unwrap();
        let g2 = x.grad();
        assert_eq!(g1, g2);
    }

    #[test]
    fn cumprod_exclusive_forward() {
        let t = Tape::new();
        let x = t
            .leaf(vec![2.0, 3.0, 4.0, 0.5, 0.5, 0.5], Shape::Matrix(2, 3))
            .unwrap();
        let y = x.cumprod_excl_rows().unwrap();
        assert_eq!(y.data(), vec![1.0, 2.0, 6.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn concat_and_slice_roundtrip_grads() {
        let t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], Shape::Matrix(2, 2)).unwrap();
        let b = t.leaf(vec![5.0, 6.0], Shape::Matrix(2, 1)).unwrap();
        let cat = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(cat.data(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = cat.slice_cols(2, 3).unwrap();
        let loss = back.sum_all();
        t.backward(loss).unwrap();
        assert_eq!(b.grad(), vec![1.0, 1.0]);
        assert_eq!(a.grad(), vec![0.0; 4]);
    }
}
