//! Shape manipulation: reshape, permute, narrow, concat, row gather.

use super::graph::{add_into, grad_slot, Graph, Node, Op, Var};
use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};

/// For each output position of a permutation, the source flat index.
fn permute_sources(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = in_shape.iter().product();
    let rank = out_shape.len();
    let mut src = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        src.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += perm_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= perm_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    src
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let value = self.nodes[ix].value.clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape { input: ix }, &[ix])
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArgument(format!(
                "invalid permutation {axes:?} for rank {}",
                shape.len()
            )));
        }
        let src = permute_sources(&shape, axes);
        let data = self.nodes[ix].value.data();
        let out: Vec<f64> = src.iter().map(|&s| data[s]).collect();
        let value = Tensor::new(axes.iter().map(|&a| shape[a]).collect(), out)?;
        self.push(
            "permute",
            value,
            Op::Permute {
                input: ix,
                axes: axes.to_vec(),
            },
            &[ix],
        )
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = self.nodes[ix].value.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let (outer, extent, inner) = super::tensor::axis_split(&shape, axis);
        let data = self.nodes[ix].value.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        self.push("narrow", value, Op::Narrow { input: ix, axis, start }, &[ix])
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let idx: Vec<usize> = xs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!("concat axis {axis} for rank {}", first.len())));
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = super::tensor::axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let ext = self.nodes[i].value.shape()[axis];
                let d = self.nodes[i].value.data();
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat { inputs: idx.clone(), axis }, &idx)
    }

    /// Selects rows of a `[V×D]` table, giving `[ids.len()×D]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let shape = self.nodes[it].value.shape();
        if shape.len() != 2 || ids.is_empty() {
            return Err(Error::InvalidArgument(format!("gather_rows on shape {shape:?}")));
        }
        let (rows, dim) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!("row {bad} out of range for {rows} rows")));
        }
        let data = self.nodes[it].value.data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], out)?;
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                table: it,
                ids: ids.to_vec(),
            },
            &[it],
        )
    }
}

pub(crate) fn permute_backward(nodes: &[Node], input: usize, axes: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let shape = nodes[input].value.shape().to_vec();
    if let Some(acc) = grad_slot(nodes, grads, input) {
        for (o, s) in permute_sources(&shape, axes).into_iter().enumerate() {
            acc[s] += g[o];
        }
    }
}

pub(crate) fn narrow_backward(
    nodes: &[Node],
    input: usize,
    axis: usize,
    start: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let shape = nodes[input].value.shape().to_vec();
    let len = out.shape()[axis];
    if let Some(acc) = grad_slot(nodes, grads, input) {
        let (outer, extent, inner) = super::tensor::axis_split(&shape, axis);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            add_into(&mut acc[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
        }
    }
}

pub(crate) fn concat_backward(
    nodes: &[Node],
    inputs: &[usize],
    axis: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let (outer, total, inner) = super::tensor::axis_split(out.shape(), axis);
    let mut offset = 0;
    for &i in inputs {
        let ext = nodes[i].value.shape()[axis];
        if let Some(acc) = grad_slot(nodes, grads, i) {
            for o in 0..outer {
                let src = o * total * inner + offset * inner;
                add_into(&mut acc[o * ext * inner..(o + 1) * ext * inner], &g[src..src + ext * inner]);
            }
        }
        offset += ext;
    }
}

pub(crate) fn gather_backward(nodes: &[Node], table: usize, ids: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let dim = nodes[table].value.shape()[1];
    if let Some(acc) = grad_slot(nodes, grads, table) {
        for (r, &i) in ids.iter().enumerate() {
            add_into(&mut acc[i * dim..(i + 1) * dim], &g[r * dim..(r + 1) * dim]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_moves_channels_last() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 1, 3], (0..6).map(f64::from).collect()).unwrap());
        let y = g.permute(x, &[1, 2, 0]).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 2]);
        assert_eq!(g.value(y).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 4], (0..8).map(f64::from).collect()).unwrap());
        let a = g.narrow(x, 1, 0, 1).unwrap();
        let b = g.narrow(x, 1, 1, 3).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), g.value(x));
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut g = Graph::new();
        let t = g.param(Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap());
        let r = g.gather_rows(t, &[2, 0, 2]).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(t).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
