//! Elementwise arithmetic with numpy-style broadcasting for binary ops.

use super::graph::{grad_slot, Graph, Node, Op, Var};
use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};

/// Operation selector for [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Square,
    Sqrt,
    Log1p,
    Ln,
    Exp,
    Abs,
    ClampMin(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Scale(f64),
    AddScalar(f64),
    Relu,
    Square,
    Sqrt,
    Log1p,
    Ln,
    Exp,
    Abs,
    ClampMin(f64),
}

/// Broadcast result shape of two operands, aligned from the trailing axis.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index of the broadcast source.
fn broadcast_offsets(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < pad || in_shape[i - pad] == 1 {
                0
            } else {
                in_strides[i - pad]
            }
        })
        .collect();
    let numel: usize = out_shape.iter().product();
    let mut offsets = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

enum Layout {
    Same,
    Offsets(Vec<usize>),
}

fn layout(in_shape: &[usize], out_shape: &[usize]) -> Layout {
    if in_shape == out_shape {
        Layout::Same
    } else {
        Layout::Offsets(broadcast_offsets(in_shape, out_shape))
    }
}

impl Layout {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Layout::Same => i,
            Layout::Offsets(o) => o[i],
        }
    }
}

fn apply_binary(kind: BinaryKind, x: f64, y: f64) -> f64 {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    }
}

fn unary_name(kind: UnaryKind) -> &'static str {
    match kind {
        UnaryKind::Scale(_) => "scale",
        UnaryKind::AddScalar(_) => "add_scalar",
        UnaryKind::Relu => "relu",
        UnaryKind::Square => "square",
        UnaryKind::Sqrt => "sqrt",
        UnaryKind::Log1p => "log1p",
        UnaryKind::Ln => "ln",
        UnaryKind::Exp => "exp",
        UnaryKind::Abs => "abs",
        UnaryKind::ClampMin(_) => "clamp_min",
    }
}

fn apply_unary(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Scale(c) => c * x,
        UnaryKind::AddScalar(c) => x + c,
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Square => x * x,
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Log1p => x.ln_1p(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::ClampMin(t) => x.max(t),
    }
}

impl Graph {
    /// Generic elementwise entry point; binary ops need `b`, unary ops reject it.
    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = match op {
            ElementwiseOp::Add => Some(BinaryKind::Add),
            ElementwiseOp::Sub => Some(BinaryKind::Sub),
            ElementwiseOp::Mul => Some(BinaryKind::Mul),
            ElementwiseOp::Div => Some(BinaryKind::Div),
            _ => None,
        };
        match (binary, b) {
            (Some(kind), Some(b)) => self.binary(kind, a, b),
            (Some(_), None) => Err(Error::InvalidArgument(format!("{op:?} needs two operands"))),
            (None, Some(_)) => Err(Error::InvalidArgument(format!("{op:?} takes one operand"))),
            (None, None) => {
                let kind = match op {
                    ElementwiseOp::Scale(c) => UnaryKind::Scale(c),
                    ElementwiseOp::AddScalar(c) => UnaryKind::AddScalar(c),
                    ElementwiseOp::Relu => UnaryKind::Relu,
                    ElementwiseOp::Square => UnaryKind::Square,
                    ElementwiseOp::Sqrt => UnaryKind::Sqrt,
                    ElementwiseOp::Log1p => UnaryKind::Log1p,
                    ElementwiseOp::Ln => UnaryKind::Ln,
                    ElementwiseOp::Exp => UnaryKind::Exp,
                    ElementwiseOp::Abs => UnaryKind::Abs,
                    ElementwiseOp::ClampMin(t) => UnaryKind::ClampMin(t),
                    _ => unreachable!(),
                };
                self.unary(kind, a)
            }
        }
    }

    pub(crate) fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let sa = self.nodes[ia].value.shape();
        let sb = self.nodes[ib].value.shape();
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: name,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let la = layout(sa, &out_shape);
        let lb = layout(sb, &out_shape);
        let xa = self.nodes[ia].value.data();
        let xb = self.nodes[ib].value.data();
        if kind == BinaryKind::Div && xb.iter().any(|&v| v == 0.0) {
            return Err(Error::InvalidDomain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let numel: usize = out_shape.iter().product();
        let data: Vec<f64> = match (&la, &lb) {
            (Layout::Same, Layout::Same) => xa.iter().zip(xb).map(|(&x, &y)| apply_binary(kind, x, y)).collect(),
            _ => (0..numel).map(|i| apply_binary(kind, xa[la.at(i)], xb[lb.at(i)])).collect(),
        };
        let value = Tensor::new(out_shape, data)?;
        self.push(name, value, Op::Binary { kind, lhs: ia, rhs: ib }, &[ia, ib])
    }

    pub(crate) fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let name = unary_name(kind);
        let x = &self.nodes[ia].value;
        let invalid = match kind {
            UnaryKind::Sqrt => x.data().iter().any(|&v| v < 0.0),
            UnaryKind::Log1p => x.data().iter().any(|&v| v <= -1.0),
            UnaryKind::Ln => x.data().iter().any(|&v| v <= 0.0),
            _ => false,
        };
        if invalid {
            return Err(Error::InvalidDomain {
                op: name,
                detail: "input outside the function's domain".into(),
            });
        }
        let value = x.map(|v| apply_unary(kind, v));
        self.push(name, value, Op::Unary { kind, input: ia }, &[ia])
    }

    /// Applies a user-supplied scalar function with its derivative.
    pub fn map_unary(&mut self, a: Var, f: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.map(f);
        self.push("map_unary", value, Op::Custom { input: ia, derivative }, &[ia])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(c), a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::AddScalar(c), a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn log1p(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log1p, a)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Ln, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn clamp_min(&mut self, a: Var, threshold: f64) -> Result<Var> {
        self.unary(UnaryKind::ClampMin(threshold), a)
    }
}

/// Sums `g` (laid out in `out_shape`) back onto an operand of `in_shape`.
fn reduce_broadcast(acc: &mut [f64], in_shape: &[usize], out_shape: &[usize], g: impl Fn(usize) -> f64) {
    match layout(in_shape, out_shape) {
        Layout::Same => {
            for (i, a) in acc.iter_mut().enumerate() {
                *a += g(i);
            }
        }
        Layout::Offsets(offsets) => {
            for (i, &o) in offsets.iter().enumerate() {
                acc[o] += g(i);
            }
        }
    }
}

pub(crate) fn binary_backward(
    kind: BinaryKind,
    nodes: &[Node],
    lhs: usize,
    rhs: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let out_shape = out.shape();
    let sa = nodes[lhs].value.shape();
    let sb = nodes[rhs].value.shape();
    let la = layout(sa, out_shape);
    let lb = layout(sb, out_shape);
    let xa = nodes[lhs].value.data();
    let xb = nodes[rhs].value.data();
    if let Some(acc) = grad_slot(nodes, grads, lhs) {
        match kind {
            BinaryKind::Add | BinaryKind::Sub => reduce_broadcast(acc, sa, out_shape, |i| g[i]),
            BinaryKind::Mul => reduce_broadcast(acc, sa, out_shape, |i| g[i] * xb[lb.at(i)]),
            BinaryKind::Div => reduce_broadcast(acc, sa, out_shape, |i| g[i] / xb[lb.at(i)]),
        }
    }
    if let Some(acc) = grad_slot(nodes, grads, rhs) {
        match kind {
            BinaryKind::Add => reduce_broadcast(acc, sb, out_shape, |i| g[i]),
            BinaryKind::Sub => reduce_broadcast(acc, sb, out_shape, |i| -g[i]),
            BinaryKind::Mul => reduce_broadcast(acc, sb, out_shape, |i| g[i] * xa[la.at(i)]),
            BinaryKind::Div => reduce_broadcast(acc, sb, out_shape, |i| {
                let y = xb[lb.at(i)];
                -g[i] * xa[la.at(i)] / (y * y)
            }),
        }
    }
}

pub(crate) fn unary_backward(
    kind: UnaryKind,
    nodes: &[Node],
    input: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let x = nodes[input].value.data();
    let y = out.data();
    let Some(acc) = grad_slot(nodes, grads, input) else { return };
    for i in 0..acc.len() {
        let d = match kind {
            UnaryKind::Scale(c) => c,
            UnaryKind::AddScalar(_) => 1.0,
            UnaryKind::Relu => {
                if x[i] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Square => 2.0 * x[i],
            UnaryKind::Sqrt => 0.5 / y[i],
            UnaryKind::Log1p => 1.0 / (1.0 + x[i]),
            UnaryKind::Ln => 1.0 / x[i],
            UnaryKind::Exp => y[i],
            UnaryKind::Abs => {
                if x[i] > 0.0 {
                    1.0
                } else if x[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::ClampMin(t) => {
                if x[i] > t {
                    1.0
                } else {
                    0.0
                }
            }
        };
        acc[i] += g[i] * d;
    }
}
