//! Reductions and the normalizing / accumulating ops built on them.

use super::graph::{grad_slot, Graph, Node, Op, Var};
use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Variance epsilon used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn axis_check(shape: &[usize], axis: usize, op: &'static str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!("{op}: axis {axis} invalid for shape {shape:?}")));
    }
    Ok(())
}

impl Graph {
    /// Reduces over `axis` (removing it) or over every element when `axis` is `None`.
    ///
    /// Max routes its gradient to the first maximal index.
    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        let (outer, extent, inner, out_shape) = match axis {
            None => (1, self.nodes[ix].value.numel(), 1, vec![1]),
            Some(a) => {
                axis_check(&shape, a, "reduce")?;
                let (o, e, i) = axis_split(&shape, a);
                let mut s = shape.clone();
                s.remove(a);
                if s.is_empty() {
                    s.push(1);
                }
                (o, e, i, s)
            }
        };
        let data = self.nodes[ix].value.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for e in 0..extent {
                        let row = &data[(o * extent + e) * inner..][..inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= extent as f64);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut best_v = data[o * extent * inner + i];
                        for e in 1..extent {
                            let v = data[(o * extent + e) * inner + i];
                            if v > best_v {
                                best_v = v;
                                best = e;
                            }
                        }
                        out[o * inner + i] = best_v;
                        argmax[o * inner + i] = (o * extent + best) * inner + i;
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(
            "reduce",
            value,
            Op::Reduce {
                input: ix,
                kind,
                axis,
                argmax,
            },
            &[ix],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Sum, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Mean, None)
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        axis_check(&shape, axis, "softmax")?;
        let (outer, extent, inner) = axis_split(&shape, axis);
        let data = self.nodes[ix].value.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * extent + e) * inner + i;
                let m = (0..extent).map(|e| data[at(e)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for e in 0..extent {
                    let v = (data[at(e)] - m).exp();
                    out[at(e)] = v;
                    z += v;
                }
                for e in 0..extent {
                    out[at(e)] /= z;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax { input: ix, axis }, &[ix])
    }

    /// Normalizes over the last axis, then applies `gain` and `bias` (both `[D]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let shape = self.nodes[ix].value.shape().to_vec();
        let d = *shape.last().expect("rank >= 1");
        for &p in &[ig, ib] {
            if self.nodes[p].value.shape() != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.nodes[p].value.shape().to_vec(),
                });
            }
        }
        let data = self.nodes[ix].value.data();
        let gv = self.nodes[ig].value.data();
        let bv = self.nodes[ib].value.data();
        let rows = data.len() / d;
        let mut normalized = vec![0.0; data.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; data.len()];
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mu) * is;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                input: ix,
                gain: ig,
                bias: ib,
                normalized,
                inv_std,
            },
            &[ix, ig, ib],
        )
    }

    /// `y[i] = Σ_{j≥i} x[j]` along `axis`.
    pub fn reverse_cumsum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        axis_check(&shape, axis, "reverse_cumsum")?;
        let (outer, extent, inner) = axis_split(&shape, axis);
        let data = self.nodes[ix].value.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for e in (0..extent).rev() {
                    let at = (o * extent + e) * inner + i;
                    acc += data[at];
                    out[at] = acc;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("reverse_cumsum", value, Op::ReverseCumsum { input: ix, axis }, &[ix])
    }

    /// Channelwise max of `[P×C]` rows into an `m×m×C` grid at `cells` (row, col).
    ///
    /// Cells that receive nothing are zero. Ties go to the first contributor.
    pub fn scatter_max(&mut self, values: Var, cells: &[(usize, usize)], m: usize) -> Result<Var> {
        let iv = self.check(values)?;
        let shape = self.nodes[iv].value.shape();
        if shape.len() != 2 || shape[0] != cells.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_max",
                lhs: shape.to_vec(),
                rhs: vec![cells.len()],
            });
        }
        if let Some(bad) = cells.iter().find(|&&(r, c)| r >= m || c >= m) {
            return Err(Error::InvalidArgument(format!("scatter_max cell {bad:?} outside {m}x{m} grid")));
        }
        let ch = shape[1];
        let data = self.nodes[iv].value.data();
        let mut out = vec![0.0; m * m * ch];
        let mut source = vec![usize::MAX; m * m * ch];
        for (p, &(r, c)) in cells.iter().enumerate() {
            let base = (r * m + c) * ch;
            for k in 0..ch {
                let v = data[p * ch + k];
                let slot = base + k;
                if source[slot] == usize::MAX || v > out[slot] {
                    out[slot] = v;
                    source[slot] = p * ch + k;
                }
            }
        }
        let value = Tensor::new(vec![m, m, ch], out)?;
        self.push("scatter_max", value, Op::ScatterMax { values: iv, source }, &[iv])
    }

    /// `Σ mask·|pred−target| / Σ mask` as a scalar.
    pub fn l1_masked(&mut self, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
        let (ip, it) = (self.check(pred)?, self.check(target)?);
        let sp = self.nodes[ip].value.shape();
        let st = self.nodes[it].value.shape();
        if sp != st || sp != mask.shape() {
            return Err(Error::ShapeMismatch {
                op: "l1_masked",
                lhs: sp.to_vec(),
                rhs: st.to_vec(),
            });
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidArgument("l1_masked mask must be 0/1".into()));
        }
        let denom: f64 = mask.data().iter().sum();
        if denom == 0.0 {
            return Err(Error::InvalidArgument("l1_masked mask is all zero".into()));
        }
        let p = self.nodes[ip].value.data();
        let t = self.nodes[it].value.data();
        let total: f64 = p
            .iter()
            .zip(t)
            .zip(mask.data())
            .map(|((a, b), m)| m * (a - b).abs())
            .sum();
        let value = Tensor::scalar(total / denom);
        self.push(
            "l1_masked",
            value,
            Op::L1Masked {
                pred: ip,
                target: it,
                mask: mask.data().to_vec(),
                denom,
            },
            &[ip, it],
        )
    }
}

pub(crate) fn reduce_backward(
    nodes: &[Node],
    input: usize,
    kind: ReduceKind,
    axis: Option<usize>,
    argmax: &[usize],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let shape = nodes[input].value.shape().to_vec();
    let Some(acc) = grad_slot(nodes, grads, input) else { return };
    let (outer, extent, inner) = match axis {
        None => (1, acc.len(), 1),
        Some(a) => axis_split(&shape, a),
    };
    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let s = if kind == ReduceKind::Mean { 1.0 / extent as f64 } else { 1.0 };
            for o in 0..outer {
                for e in 0..extent {
                    for i in 0..inner {
                        acc[(o * extent + e) * inner + i] += s * g[o * inner + i];
                    }
                }
            }
        }
        ReduceKind::Max => {
            for (&src, &gi) in argmax.iter().zip(g) {
                acc[src] += gi;
            }
        }
    }
}

pub(crate) fn softmax_backward(
    nodes: &[Node],
    input: usize,
    axis: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let (outer, extent, inner) = axis_split(out.shape(), axis);
    let y = out.data();
    let Some(acc) = grad_slot(nodes, grads, input) else { return };
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let dot: f64 = (0..extent).map(|e| g[at(e)] * y[at(e)]).sum();
            for e in 0..extent {
                acc[at(e)] += y[at(e)] * (g[at(e)] - dot);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    nodes: &[Node],
    input: usize,
    gain: usize,
    bias: usize,
    normalized: &[f64],
    inv_std: &[f64],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let d = nodes[gain].value.numel();
    let rows = normalized.len() / d;
    let gv = nodes[gain].value.data().to_vec();
    if let Some(acc) = grad_slot(nodes, grads, gain) {
        for r in 0..rows {
            for j in 0..d {
                acc[j] += g[r * d + j] * normalized[r * d + j];
            }
        }
    }
    if let Some(acc) = grad_slot(nodes, grads, bias) {
        for r in 0..rows {
            for j in 0..d {
                acc[j] += g[r * d + j];
            }
        }
    }
    if let Some(acc) = grad_slot(nodes, grads, input) {
        let n = d as f64;
        for r in 0..rows {
            let xh = &normalized[r * d..(r + 1) * d];
            let dxh: Vec<f64> = (0..d).map(|j| g[r * d + j] * gv[j]).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / n;
            let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
            for j in 0..d {
                acc[r * d + j] += inv_std[r] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
    }
}

pub(crate) fn reverse_cumsum_backward(
    nodes: &[Node],
    input: usize,
    axis: usize,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let shape = nodes[input].value.shape().to_vec();
    let (outer, extent, inner) = axis_split(&shape, axis);
    let Some(acc) = grad_slot(nodes, grads, input) else { return };
    for o in 0..outer {
        for i in 0..inner {
            let mut run = 0.0;
            for e in 0..extent {
                let at = (o * extent + e) * inner + i;
                run += g[at];
                acc[at] += run;
            }
        }
    }
}

pub(crate) fn l1_masked_backward(
    nodes: &[Node],
    pred: usize,
    target: usize,
    mask: &[f64],
    denom: f64,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let p = nodes[pred].value.data();
    let t = nodes[target].value.data();
    let sign = |i: usize| {
        let d = p[i] - t[i];
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let scale = g[0] / denom;
    if let Some(acc) = grad_slot(nodes, grads, pred) {
        for i in 0..acc.len() {
            acc[i] += scale * mask[i] * sign(i);
        }
    }
    if let Some(acc) = grad_slot(nodes, grads, target) {
        for i in 0..acc.len() {
            acc[i] -= scale * mask[i] * sign(i);
        }
    }
}
