use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::ConvGeometry;
use super::elementwise::{BinaryKind, UnaryKind};
use super::reduce::ReduceKind;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) graph: u64,
    pub(crate) index: usize,
}

impl Var {
    /// Position of the node on its tape.
    pub fn node_id(&self) -> usize {
        self.index
    }
}

pub(crate) enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        lhs: usize,
        rhs: usize,
    },
    Unary {
        kind: UnaryKind,
        input: usize,
    },
    Custom {
        input: usize,
        derivative: fn(f64) -> f64,
    },
    Matmul {
        lhs: usize,
        rhs: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        input: usize,
        kernel: usize,
        geom: ConvGeometry,
    },
    Reshape {
        input: usize,
    },
    Permute {
        input: usize,
        axes: Vec<usize>,
    },
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    Reduce {
        input: usize,
        kind: ReduceKind,
        axis: Option<usize>,
        argmax: Vec<usize>,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ReverseCumsum {
        input: usize,
        axis: usize,
    },
    ScatterMax {
        values: usize,
        source: Vec<usize>,
    },
    L1Masked {
        pred: usize,
        target: usize,
        mask: Vec<f64>,
        denom: f64,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Linear tape of tensor operations supporting one reverse sweep.
///
/// Nodes are appended in execution order, so the tape is always a valid
/// topological order and backward simply walks it in reverse.
pub struct Graph {
    id: u64,
    pub(crate) nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every leaf that requires them.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for `var`.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get_mut(var.index).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.graph, self.id, "variable belongs to another graph");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[self.check(var).expect("foreign variable")].requires_grad
    }

    pub(crate) fn check(&self, var: Var) -> Result<usize> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(Error::Backward("variable is detached from this graph".into()));
        }
        Ok(var.index)
    }

    /// Appends a computed node, rejecting non-finite results.
    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        // Constant subgraphs need no backward bookkeeping.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Allows another backward pass over the same tape.
    pub fn reset_backward(&mut self) {
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Each node is visited once, in reverse tape order. A second call without
    /// [`Graph::reset_backward`] is an error.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        let root_idx = self.check(root)?;
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this graph; reset it first".into(),
            ));
        }
        if !self.nodes[root_idx].value.is_scalar() {
            return Err(Error::Backward(format!(
                "root must be scalar, got shape {:?}",
                self.nodes[root_idx].value.shape()
            )));
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[root_idx].requires_grad {
            grads[root_idx] = Some(vec![1.0]);
        }
        for i in (0..=root_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaf_grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads: leaf_grads,
        })
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Binary { kind, lhs, rhs } => {
                super::elementwise::binary_backward(*kind, nodes, *lhs, *rhs, out, g, grads)
            }
            Op::Unary { kind, input } => {
                super::elementwise::unary_backward(*kind, nodes, *input, out, g, grads)
            }
            Op::Custom { input, derivative } => {
                let x = nodes[*input].value.data();
                if let Some(acc) = grad_slot(nodes, grads, *input) {
                    for ((a, &gi), &xi) in acc.iter_mut().zip(g).zip(x) {
                        *a += gi * derivative(xi);
                    }
                }
            }
            Op::Matmul { lhs, rhs } => super::linalg::matmul_backward(nodes, *lhs, *rhs, g, grads),
            Op::Conv2d {
                input,
                kernel,
                geom,
            } => super::conv::conv2d_backward(nodes, *input, *kernel, *geom, out, g, grads),
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
            } => super::conv::conv_transpose2d_backward(nodes, *input, *kernel, *geom, out, g, grads),
            Op::Reshape { input } => {
                if let Some(acc) = grad_slot(nodes, grads, *input) {
                    add_into(acc, g);
                }
            }
            Op::Permute { input, axes } => super::shape::permute_backward(nodes, *input, axes, g, grads),
            Op::Narrow { input, axis, start } => {
                super::shape::narrow_backward(nodes, *input, *axis, *start, out, g, grads)
            }
            Op::Concat { inputs, axis } => super::shape::concat_backward(nodes, inputs, *axis, out, g, grads),
            Op::GatherRows { table, ids } => super::shape::gather_backward(nodes, *table, ids, g, grads),
            Op::Reduce {
                input,
                kind,
                axis,
                argmax,
            } => super::reduce::reduce_backward(nodes, *input, *kind, *axis, argmax, g, grads),
            Op::Softmax { input, axis } => super::reduce::softmax_backward(nodes, *input, *axis, out, g, grads),
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => super::reduce::layer_norm_backward(nodes, *input, *gain, *bias, normalized, inv_std, g, grads),
            Op::ReverseCumsum { input, axis } => {
                super::reduce::reverse_cumsum_backward(nodes, *input, *axis, g, grads)
            }
            Op::ScatterMax { values, source } => {
                if let Some(acc) = grad_slot(nodes, grads, *values) {
                    for (&src, &gi) in source.iter().zip(g) {
                        if src != usize::MAX {
                            acc[src] += gi;
                        }
                    }
                }
            }
            Op::L1Masked {
                pred,
                target,
                mask,
                denom,
            } => super::reduce::l1_masked_backward(nodes, *pred, *target, mask, *denom, g, grads),
        }
    }
}

/// Gradient accumulator for node `idx`, or `None` when it needs no gradient.
pub(crate) fn grad_slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    idx: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.numel();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; len]))
}

pub(crate) fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
