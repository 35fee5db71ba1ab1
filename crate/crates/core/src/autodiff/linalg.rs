use super::gemm::{gemm, MatRef};
use super::graph::{grad_slot, Graph, Node, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

impl Graph {
    /// Matrix product of `[M×K]` and `[K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let sa = self.nodes[ia].value.shape();
        let sb = self.nodes[ib].value.shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::row_major(self.nodes[ia].value.data(), m, k),
            MatRef::row_major(self.nodes[ib].value.data(), k, n),
            &mut out,
            0.0,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::Matmul { lhs: ia, rhs: ib }, &[ia, ib])
    }

    /// `x·W + b` for `x: [M×K]`, `W: [K×N]`, `b: [N]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add(y, bias)
    }
}

pub(crate) fn matmul_backward(nodes: &[Node], lhs: usize, rhs: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let a = &nodes[lhs].value;
    let b = &nodes[rhs].value;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    // dA = dC · Bᵀ
    if let Some(acc) = grad_slot(nodes, grads, lhs) {
        gemm(
            MatRef::row_major(g, m, n),
            MatRef::transposed(b.data(), k, n),
            acc,
            1.0,
        );
    }
    // dB = Aᵀ · dC
    if let Some(acc) = grad_slot(nodes, grads, rhs) {
        gemm(
            MatRef::transposed(a.data(), m, k),
            MatRef::row_major(g, m, n),
            acc,
            1.0,
        );
    }
}
