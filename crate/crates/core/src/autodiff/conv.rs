//! 2-D convolution and its adjoint, lowered to im2col + gemm.
//!
//! Inputs are `[C×H×W]` or batched `[B×C×H×W]`; kernels are always
//! `[C_out×C_in×kH×kW]` in cross-correlation convention. The transposed
//! convolution reuses the same kernel layout and maps `C_out` channels back
//! to `C_in`, i.e. it is exactly the input-gradient of [`Graph::conv2d`].

use super::gemm::{gemm, MatRef};
use super::graph::{grad_slot, Graph, Node, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-axis stride and zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride, stride],
            padding: [padding, padding],
        }
    }

    /// Geometry acting along the width axis only (height kept at 1 row).
    pub fn along_width(stride: usize, padding: usize) -> Self {
        Self {
            stride: [1, stride],
            padding: [0, padding],
        }
    }
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Dims {
    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

fn split_batch(shape: &[usize], op: &'static str) -> Result<(bool, usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((false, 1, c, h, w)),
        [b, c, h, w] => Ok((true, b, c, h, w)),
        _ => Err(Error::Geometry {
            op,
            detail: format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"),
        }),
    }
}

/// Unfolds one image `[c_in×h×w]` into columns `[c_in·kh·kw × oh·ow]`.
fn im2col(x: &[f64], d: &Dims, geom: ConvGeometry, cols: &mut [f64]) {
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let n_out = d.oh * d.ow;
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..d.oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Folds columns back onto an image, accumulating overlaps.
fn col2im(cols: &[f64], d: &Dims, geom: ConvGeometry, x: &mut [f64]) {
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let n_out = d.oh * d.ow;
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..d.oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, &v) in src[oy * d.ow..(oy + 1) * d.ow].iter().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn out_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || n + 2 * p < k {
        return None;
    }
    Some((n + 2 * p - k) / s + 1)
}

fn kernel_dims(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *shape {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Geometry {
            op,
            detail: format!("kernel must be rank 4, got {shape:?}"),
        }),
    }
}

/// Dims of the forward convolution relating a `[c_in,h,w]` image to `[c_out,oh,ow]`.
fn conv_dims(x_shape: &[usize], k_shape: &[usize], geom: ConvGeometry, op: &'static str) -> Result<(bool, Dims)> {
    let (batched, batch, c_in, h, w) = split_batch(x_shape, op)?;
    let [c_out, kc, kh, kw] = kernel_dims(k_shape, op)?;
    if kc != c_in {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x_shape.to_vec(),
            rhs: k_shape.to_vec(),
        });
    }
    let (Some(oh), Some(ow)) = (
        out_extent(h, kh, geom.stride[0], geom.padding[0]),
        out_extent(w, kw, geom.stride[1], geom.padding[1]),
    ) else {
        return Err(Error::Geometry {
            op,
            detail: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (or zero stride)"),
        });
    };
    Ok((
        batched,
        Dims {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
        },
    ))
}

/// Dims for a transposed convolution: `x` plays the role of the conv output.
fn transpose_dims(x_shape: &[usize], k_shape: &[usize], geom: ConvGeometry) -> Result<(bool, Dims)> {
    let op = "conv_transpose2d";
    let (batched, batch, c, h, w) = split_batch(x_shape, op)?;
    let [k_out, k_in, kh, kw] = kernel_dims(k_shape, op)?;
    if k_out != c {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x_shape.to_vec(),
            rhs: k_shape.to_vec(),
        });
    }
    let extent = |n: usize, k: usize, s: usize, p: usize| -> Option<usize> {
        let full = (n - 1) * s + k;
        (s > 0 && full > 2 * p).then(|| full - 2 * p)
    };
    let (Some(oh), Some(ow)) = (
        extent(h, kh, geom.stride[0], geom.padding[0]),
        extent(w, kw, geom.stride[1], geom.padding[1]),
    ) else {
        return Err(Error::Geometry {
            op,
            detail: format!("output extent < 1 for input {h}x{w}, kernel {kh}x{kw}"),
        });
    };
    // In conv terms the image is [k_in, oh, ow] and the output is [c, h, w].
    Ok((
        batched,
        Dims {
            batch,
            c_in: k_in,
            h: oh,
            w: ow,
            c_out: c,
            kh,
            kw,
            oh: h,
            ow: w,
        },
    ))
}

impl Graph {
    pub fn conv2d(&mut self, input: Var, kernel: Var, geom: ConvGeometry) -> Result<Var> {
        let (ix, ik) = (self.check(input)?, self.check(kernel)?);
        let (batched, d) = conv_dims(self.nodes[ix].value.shape(), self.nodes[ik].value.shape(), geom, "conv2d")?;
        let x = self.nodes[ix].value.data();
        let k = self.nodes[ik].value.data();
        let (img, n_out, rows) = (d.c_in * d.h * d.w, d.oh * d.ow, d.col_rows());
        let mut cols = vec![0.0; rows * n_out];
        let mut out = vec![0.0; d.batch * d.c_out * n_out];
        for b in 0..d.batch {
            im2col(&x[b * img..(b + 1) * img], &d, geom, &mut cols);
            gemm(
                MatRef::row_major(k, d.c_out, rows),
                MatRef::row_major(&cols, rows, n_out),
                &mut out[b * d.c_out * n_out..(b + 1) * d.c_out * n_out],
                0.0,
            );
        }
        let shape = if batched {
            vec![d.batch, d.c_out, d.oh, d.ow]
        } else {
            vec![d.c_out, d.oh, d.ow]
        };
        let value = Tensor::new(shape, out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input: ix,
                kernel: ik,
                geom,
            },
            &[ix, ik],
        )
    }

    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, geom: ConvGeometry) -> Result<Var> {
        let (ix, ik) = (self.check(input)?, self.check(kernel)?);
        let (batched, d) = transpose_dims(self.nodes[ix].value.shape(), self.nodes[ik].value.shape(), geom)?;
        let x = self.nodes[ix].value.data();
        let k = self.nodes[ik].value.data();
        let (img, n_in, rows) = (d.c_in * d.h * d.w, d.oh * d.ow, d.col_rows());
        let mut cols = vec![0.0; rows * n_in];
        let mut out = vec![0.0; d.batch * img];
        for b in 0..d.batch {
            gemm(
                MatRef::transposed(k, d.c_out, rows),
                MatRef::row_major(&x[b * d.c_out * n_in..(b + 1) * d.c_out * n_in], d.c_out, n_in),
                &mut cols,
                0.0,
            );
            col2im(&cols, &d, geom, &mut out[b * img..(b + 1) * img]);
        }
        let shape = if batched {
            vec![d.batch, d.c_in, d.h, d.w]
        } else {
            vec![d.c_in, d.h, d.w]
        };
        let value = Tensor::new(shape, out)?;
        self.push(
            "conv_transpose2d",
            value,
            Op::ConvTranspose2d {
                input: ix,
                kernel: ik,
                geom,
            },
            &[ix, ik],
        )
    }
}

pub(crate) fn conv2d_backward(
    nodes: &[Node],
    input: usize,
    kernel: usize,
    geom: ConvGeometry,
    _out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let x_t = &nodes[input].value;
    let k_t = &nodes[kernel].value;
    let (_, d) = conv_dims(x_t.shape(), k_t.shape(), geom, "conv2d").expect("validated in forward");
    let (img, n_out, rows) = (d.c_in * d.h * d.w, d.oh * d.ow, d.col_rows());
    let x = x_t.data();
    let k = k_t.data();
    let mut cols = vec![0.0; rows * n_out];
    if nodes[kernel].requires_grad {
        let acc = grad_slot(nodes, grads, kernel).expect("requires grad");
        for b in 0..d.batch {
            im2col(&x[b * img..(b + 1) * img], &d, geom, &mut cols);
            gemm(
                MatRef::row_major(&g[b * d.c_out * n_out..(b + 1) * d.c_out * n_out], d.c_out, n_out),
                MatRef::transposed(&cols, rows, n_out),
                acc,
                1.0,
            );
        }
    }
    if let Some(acc) = grad_slot(nodes, grads, input) {
        for b in 0..d.batch {
            gemm(
                MatRef::transposed(k, d.c_out, rows),
                MatRef::row_major(&g[b * d.c_out * n_out..(b + 1) * d.c_out * n_out], d.c_out, n_out),
                &mut cols,
                0.0,
            );
            col2im(&cols, &d, geom, &mut acc[b * img..(b + 1) * img]);
        }
    }
}

pub(crate) fn conv_transpose2d_backward(
    nodes: &[Node],
    input: usize,
    kernel: usize,
    geom: ConvGeometry,
    _out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let x_t = &nodes[input].value;
    let k_t = &nodes[kernel].value;
    let (_, d) = transpose_dims(x_t.shape(), k_t.shape(), geom).expect("validated in forward");
    let (img, n_in, rows) = (d.c_in * d.h * d.w, d.oh * d.ow, d.col_rows());
    let x = x_t.data();
    let k = k_t.data();
    let mut cols = vec![0.0; rows * n_in];
    let need_k = nodes[kernel].requires_grad;
    let need_x = nodes[input].requires_grad;
    for b in 0..d.batch {
        // The upstream gradient lives on the conv "image" side.
        im2col(&g[b * img..(b + 1) * img], &d, geom, &mut cols);
        let xb = &x[b * d.c_out * n_in..(b + 1) * d.c_out * n_in];
        if need_k {
            let acc = grad_slot(nodes, grads, kernel).expect("requires grad");
            gemm(
                MatRef::row_major(xb, d.c_out, n_in),
                MatRef::transposed(&cols, rows, n_in),
                acc,
                1.0,
            );
        }
        if need_x {
            let acc = grad_slot(nodes, grads, input).expect("requires grad");
            gemm(
                MatRef::row_major(k, d.c_out, rows),
                MatRef::row_major(&cols, rows, n_in),
                &mut acc[b * d.c_out * n_in..(b + 1) * d.c_out * n_in],
                1.0,
            );
        }
    }
}
