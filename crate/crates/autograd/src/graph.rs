//! Dynamic computation graph recorded as a tape.
//!
//! Every operation appends a node holding its forward value. Nodes are stored
//! in creation order, which is a topological order, so `backward` is a single
//! reverse sweep. Operations whose inputs are all constants are stored as
//! constants and never visited by the sweep.

use std::sync::Arc;

use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
        n: usize,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        widths: Vec<usize>,
    },
    Slice {
        x: usize,
        outer: usize,
        in_width: usize,
        start: usize,
        width: usize,
    },
    Reshape(usize),
    Softmax {
        x: usize,
        outer: usize,
        dim: usize,
        inner: usize,
    },
    LogSoftmax {
        x: usize,
        outer: usize,
        dim: usize,
        inner: usize,
    },
    MaskedSoftmax {
        x: usize,
        mask: Arc<[bool]>,
        cols: usize,
    },
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        patches: Vec<f64>,
    },
    Sum(usize),
    SumLast {
        x: usize,
        cols: usize,
    },
    SumAxis {
        x: usize,
        outer: usize,
        dim: usize,
        inner: usize,
    },
    GatherRows {
        x: usize,
        idx: Arc<[usize]>,
        width: usize,
    },
    MulRows {
        x: usize,
        w: usize,
        cols: usize,
    },
    Select {
        x: usize,
        index: usize,
    },
    SmoothL1(usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    rows: usize,
    cols: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Zero-padded im2col: one row per output cell, `k*k*cin` columns.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let pl = self.patch_len();
        let pad = (self.k / 2) as isize;
        let mut patches = vec![0.0; self.cells() * pl];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let row = &mut patches[(r * self.cols + c) * pl..][..pl];
                for dr in 0..self.k {
                    let sr = r as isize + dr as isize - pad;
                    if sr < 0 || sr >= self.rows as isize {
                        continue;
                    }
                    for dc in 0..self.k {
                        let sc = c as isize + dc as isize - pad;
                        if sc < 0 || sc >= self.cols as isize {
                            continue;
                        }
                        let src = (sr as usize * self.cols + sc as usize) * self.cin;
                        let dst = (dr * self.k + dc) * self.cin;
                        row[dst..dst + self.cin].copy_from_slice(&x[src..src + self.cin]);
                    }
                }
            }
        }
        patches
    }

    fn col2im_add(&self, dpatches: &[f64], dx: &mut [f64]) {
        let pl = self.patch_len();
        let pad = (self.k / 2) as isize;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let row = &dpatches[(r * self.cols + c) * pl..][..pl];
                for dr in 0..self.k {
                    let sr = r as isize + dr as isize - pad;
                    if sr < 0 || sr >= self.rows as isize {
                        continue;
                    }
                    for dc in 0..self.k {
                        let sc = c as isize + dc as isize - pad;
                        if sc < 0 || sc >= self.cols as isize {
                            continue;
                        }
                        let dst = (sr as usize * self.cols + sc as usize) * self.cin;
                        let src = (dr * self.k + dc) * self.cin;
                        for ch in 0..self.cin {
                            dx[dst + ch] += row[src + ch];
                        }
                    }
                }
            }
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to leaf `v`, if `v` requires grad
    /// and was reachable from the loss. Intermediate gradients are dropped.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn get_slice(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }
}

/// Dense row-major `c (+)= a · b` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: every stride/shape pair addresses memory inside the slices; the
    // callers below derive them from the tensor shapes they validated.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutogradError::NonFinite { op })
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(AutogradError::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Registers a leaf without copying its payload.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, data: Vec<f64>, rec: Op, inputs: &[usize]) -> Result<Var> {
        check_finite(op, &data)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(Tensor::from_parts(shape, data)),
            op: if requires_grad { rec } else { Op::Leaf },
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutogradError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let da = self.value(a).data();
        let db = self.value(b).data();
        let data: Vec<f64> = da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, data, rec, &[a.0, b.0])
    }

    fn map(&mut self, op: &'static str, x: Var, f: impl Fn(f64) -> f64, rec: Op) -> Result<Var> {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(op, shape, data, rec, &[x.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("scale", x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", x, |v| v + c, Op::AddScalar(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map("tanh", x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, f64::exp, Op::Exp(x.0))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, f64::ln, Op::Log(x.0))
    }

    /// Elementwise smooth-L1 (Huber with unit threshold) between `a` and `b`.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(
            "smooth_l1",
            a,
            b,
            |x, y| {
                let d = x - y;
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            },
            Op::SmoothL1(a.0, b.0),
        )
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), k, 1, self.value(b).data(), n, 1, 0.0, &mut out);
        self.push("matmul", vec![m, n], out, Op::MatMul { a: a.0, b: b.0, m, k, n }, &[a.0, b.0])
    }

    /// Adds a bias vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = sb.iter().product::<usize>();
        if sx.is_empty() || sb.len() != 1 || *sx.last().unwrap() != n {
            return Err(AutogradError::ShapeMismatch {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bv = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b))
            .collect();
        let shape = sx.to_vec();
        self.push("add_bias", shape, data, Op::AddBias { x: x.0, bias: bias.0, n }, &[x.0, bias.0])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(AutogradError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = axis_split("concat", &base, axis)?;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutogradError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[axis] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total / inner.max(1);
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        self.push(
            "concat",
            shape,
            data,
            Op::Concat {
                inputs: ids.clone(),
                outer,
                widths,
            },
            &ids,
        )
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = axis_split("slice", &shape, axis)?;
        if start > end || end > dim {
            return Err(AutogradError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} out of bounds for axis of length {dim}"),
            });
        }
        let in_width = dim * inner;
        let width = (end - start) * inner;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * in_width + start * inner;
            data.extend_from_slice(&src[base..base + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        self.push(
            "slice",
            out_shape,
            data,
            Op::Slice {
                x: x.0,
                outer,
                in_width,
                start: start * inner,
                width,
            },
            &[x.0],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push("reshape", shape.to_vec(), t.into_data(), Op::Reshape(x.0), &[x.0])
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let op = if log { "log_softmax" } else { "softmax" };
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = axis_split(op, &shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| o * dim * inner + d * inner + i;
                let max = (0..dim).map(|d| src[at(d)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..dim).map(|d| (src[at(d)] - max).exp()).sum();
                let lz = z.ln();
                for d in 0..dim {
                    out[at(d)] = if log {
                        src[at(d)] - max - lz
                    } else {
                        (src[at(d)] - max).exp() / z
                    };
                }
            }
        }
        let rec = if log {
            Op::LogSoftmax { x: x.0, outer, dim, inner }
        } else {
            Op::Softmax { x: x.0, outer, dim, inner }
        };
        self.push(op, shape, out, rec, &[x.0])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    /// Softmax over the valid entries of each row of a `[rows, cols]`
    /// tensor. Masked entries come out exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Arc<[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || mask.len() != shape[0] * shape[1] {
            return Err(AutogradError::ShapeMismatch {
                op: "masked_softmax",
                lhs: shape,
                rhs: vec![mask.len()],
            });
        }
        let cols = shape[1];
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for (r, row) in src.chunks(cols).enumerate() {
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AutogradError::InvalidArgument {
                    op: "masked_softmax",
                    msg: format!("row {r} has no valid entries"),
                });
            }
            let z: f64 = row.iter().zip(m).filter(|(_, &ok)| ok).map(|(&v, _)| (v - max).exp()).sum();
            for c in 0..cols {
                if m[c] {
                    out[r * cols + c] = (row[c] - max).exp() / z;
                }
            }
        }
        self.push("masked_softmax", shape, out, Op::MaskedSoftmax { x: x.0, mask, cols }, &[x.0])
    }

    /// Same-padded, stride-1 2D convolution over a `[rows, cols, cin]`
    /// channels-last map with weights `[cout, k, k, cin]` and bias `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sw[2] || sw[1] % 2 == 0 || sw[3] != sx[2] {
            return Err(AutogradError::ShapeMismatch {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if sb != [sw[0]] {
            return Err(AutogradError::ShapeMismatch {
                op: "conv2d",
                lhs: sw.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let geom = ConvGeom {
            rows: sx[0],
            cols: sx[1],
            cin: sx[2],
            cout: sw[0],
            k: sw[1],
        };
        let patches = geom.im2col(self.value(x).data());
        let pl = geom.patch_len();
        let cells = geom.cells();
        let bias = self.value(b).data();
        let mut out: Vec<f64> = (0..cells).flat_map(|_| bias.iter().copied()).collect();
        gemm(cells, pl, geom.cout, &patches, pl, 1, self.value(w).data(), 1, pl, 1.0, &mut out);
        let need_grad = self.requires_grad(w) || self.requires_grad(x);
        self.push(
            "conv2d",
            vec![geom.rows, geom.cols, geom.cout],
            out,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
                patches: if need_grad { patches } else { Vec::new() },
            },
            &[x.0, w.0, b.0],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Vec::new(), vec![s], Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums the last axis: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or(AutogradError::InvalidAxis {
            op: "sum_last",
            axis: 0,
            rank: 0,
        })?;
        let data: Vec<f64> = self.value(x).data().chunks(cols.max(1)).map(|r| r.iter().sum()).collect();
        self.push("sum_last", shape[..shape.len() - 1].to_vec(), data, Op::SumLast { x: x.0, cols }, &[x.0])
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = axis_split("sum_axis", &shape, axis)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let row = &src[(o * dim + d) * inner..][..inner];
                data[o * inner..(o + 1) * inner].iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push("sum_axis", out_shape, data, Op::SumAxis { x: x.0, outer, dim, inner }, &[x.0])
    }

    /// Row gather on a `[m, n]` tensor: `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(AutogradError::InvalidArgument {
                op: "gather_rows",
                msg: format!("expected rank 2, got {shape:?}"),
            });
        }
        let (m, width) = (shape[0], shape[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= m) {
            return Err(AutogradError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of range for {m} rows"),
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx.iter() {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        self.push("gather_rows", vec![idx.len(), width], data, Op::GatherRows { x: x.0, idx, width }, &[x.0])
    }

    /// Scales each row of `[m, n]` by the matching entry of `w` (`m` values).
    pub fn mul_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let m = sw.iter().product::<usize>();
        if sx.len() != 2 || sx[0] != m {
            return Err(AutogradError::ShapeMismatch {
                op: "mul_rows",
                lhs: sx,
                rhs: sw,
            });
        }
        let cols = sx[1];
        let wv = self.value(w).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(cols.max(1))
            .zip(wv)
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        self.push("mul_rows", sx, data, Op::MulRows { x: x.0, w: w.0, cols }, &[x.0, w.0])
    }

    /// Picks one element by flat index as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if index >= n {
            return Err(AutogradError::InvalidArgument {
                op: "select",
                msg: format!("index {index} out of range for {n} elements"),
            });
        }
        let v = self.value(x).data()[index];
        self.push("select", Vec::new(), vec![v], Op::Select { x: x.0, index }, &[x.0])
    }

    /// Reverse sweep from a scalar `loss`, consuming the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss).to_vec();
        if !self.value(loss).is_scalar() {
            return Err(AutogradError::NonScalarLoss(shape));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn val(&self, i: usize) -> &[f64] {
        self.nodes[i].value.data()
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |id: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[id].requires_grad {
                return;
            }
            let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
            f(buf);
        };
        let y = self.val(i);
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                acc(*a, &mut |d| {
                    for ((d, g), v) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * v;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), v) in d.iter_mut().zip(g).zip(va) {
                        *d += g * v;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * c)),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Sigmoid(x) => acc(*x, &mut |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * (1.0 - y * y);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y;
                }
            }),
            Op::Log(x) => {
                let vx = self.val(*x);
                acc(*x, &mut |d| {
                    for ((d, g), v) in d.iter_mut().zip(g).zip(vx) {
                        *d += g / v;
                    }
                })
            }
            Op::SmoothL1(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let slope: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .zip(g)
                    .map(|((x, y), g)| {
                        let d = x - y;
                        g * if d.abs() < 1.0 { d } else { d.signum() }
                    })
                    .collect();
                acc(*a, &mut |d| d.iter_mut().zip(&slope).for_each(|(d, s)| *d += s));
                acc(*b, &mut |d| d.iter_mut().zip(&slope).for_each(|(d, s)| *d -= s));
            }
            &Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (self.val(a), self.val(b));
                // da = g · bᵀ, db = aᵀ · g
                acc(a, &mut |d| gemm(m, n, k, g, n, 1, vb, 1, n, 1.0, d));
                acc(b, &mut |d| gemm(k, m, n, va, 1, k, g, n, 1, 1.0, d));
            }
            &Op::AddBias { x, bias, n } => {
                acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(bias, &mut |d| {
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Concat { inputs, outer, widths } => {
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    acc(v, &mut |d| {
                        for o in 0..*outer {
                            let src = &g[o * total + off..o * total + off + w];
                            d[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    });
                    off += w;
                }
            }
            &Op::Slice { x, outer, in_width, start, width } => acc(x, &mut |d| {
                for o in 0..outer {
                    let dst = &mut d[o * in_width + start..o * in_width + start + width];
                    dst.iter_mut().zip(&g[o * width..(o + 1) * width]).for_each(|(d, g)| *d += g);
                }
            }),
            &Op::Softmax { x, outer, dim, inner } => acc(x, &mut |d| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * dim * inner + k * inner + i;
                        let dot: f64 = (0..dim).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..dim {
                            d[at(k)] += y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
            }),
            &Op::LogSoftmax { x, outer, dim, inner } => acc(x, &mut |d| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * dim * inner + k * inner + i;
                        let gs: f64 = (0..dim).map(|k| g[at(k)]).sum();
                        for k in 0..dim {
                            d[at(k)] += g[at(k)] - y[at(k)].exp() * gs;
                        }
                    }
                }
            }),
            Op::MaskedSoftmax { x, mask, cols } => acc(*x, &mut |d| {
                for (r, (yr, gr)) in y.chunks(*cols).zip(g.chunks(*cols)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..*cols {
                        if mask[r * cols + c] {
                            d[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }),
            Op::Conv2d { x, w, b, geom, patches } => {
                let pl = geom.patch_len();
                let cells = geom.cells();
                let cout = geom.cout;
                acc(*w, &mut |d| gemm(cout, cells, pl, g, 1, cout, patches, pl, 1, 1.0, d));
                acc(*b, &mut |d| {
                    for row in g.chunks(cout) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
                let vw = self.val(*w);
                acc(*x, &mut |d| {
                    let mut dp = vec![0.0; cells * pl];
                    gemm(cells, cout, pl, g, cout, 1, vw, pl, 1, 0.0, &mut dp);
                    geom.col2im_add(&dp, d);
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            &Op::SumLast { x, cols } => acc(x, &mut |d| {
                for (row, &g) in d.chunks_mut(cols.max(1)).zip(g) {
                    row.iter_mut().for_each(|d| *d += g);
                }
            }),
            &Op::SumAxis { x, outer, dim, inner } => acc(x, &mut |d| {
                for o in 0..outer {
                    let gr = &g[o * inner..(o + 1) * inner];
                    for k in 0..dim {
                        d[(o * dim + k) * inner..][..inner].iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                }
            }),
            Op::GatherRows { x, idx, width } => acc(*x, &mut |d| {
                for (r, &src) in idx.iter().enumerate() {
                    let gr = &g[r * width..(r + 1) * width];
                    d[src * width..(src + 1) * width].iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                }
            }),
            &Op::MulRows { x, w, cols } => {
                let (vx, vw) = (self.val(x), self.val(w));
                acc(x, &mut |d| {
                    for ((dr, gr), s) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(vw) {
                        dr.iter_mut().zip(gr).for_each(|(d, g)| *d += g * s);
                    }
                });
                acc(w, &mut |d| {
                    for ((dw, gr), xr) in d.iter_mut().zip(g.chunks(cols)).zip(vx.chunks(cols)) {
                        *dw += gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>();
                    }
                });
            }
            &Op::Select { x, index } => acc(x, &mut |d| d[index] += g[0]),
        }
    }
}
