//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only arena: every op evaluates eagerly, stores its
//! output, and records which nodes it consumed. Because inputs always precede
//! outputs in the arena, walking it backwards is a valid topological order.
//! Graphs are built fresh for each training step and dropped afterwards.

use std::fmt;
use std::sync::Arc;

use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op implemented outside this crate. `backward` receives the cotangent
/// of the output and returns one optional cotangent per input (`None` means
/// the input is not differentiable or received no gradient).
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    Sqrt,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry, batch: usize, c_out: usize },
    Upsample2x(Var),
    MatMul { a: Var, b: Var },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Scale { x: Var, factor: f32 },
    AddScalar(Var),
    Unary { kind: UnaryKind, x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f32 },
    Softmax(Var),
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    IndexSelect { x: Var, axis: usize, indices: Arc<Vec<usize>> },
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    L1 { a: Var, b: Var },
    Mse { a: Var, b: Var },
    Custom { op: Arc<dyn CustomOp>, inputs: Vec<Var> },
}

impl Op {
    pub(crate) fn name(&self) -> &str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(_) => "upsample2x",
            Op::MatMul { .. } => "matmul",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Scale { .. } => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Relu => "relu",
                UnaryKind::Gelu => "gelu",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Tanh => "tanh",
                UnaryKind::Softplus => "softplus",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Sqrt => "sqrt",
            },
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(_) => "softmax",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::IndexSelect { .. } => "index_select",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::L1 { .. } => "l1",
            Op::Mse { .. } => "mse",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Split `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

pub(crate) fn gelu(x: f32) -> f32 {
    let x = x as f64;
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    (0.5 * x * (1.0 + u.tanh())) as f32
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let x = x as f64;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)) as f32
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
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

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad: true });
        Var(self.nodes.len() - 1)
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

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        value.check_finite(op.name())?;
        let requires_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Input => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Upsample2x(x)
            | Op::AddScalar(x)
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::Scale { x, .. }
            | Op::Unary { x, .. }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::IndexSelect { x, .. }
            | Op::Sum { x, .. }
            | Op::Mean { x, .. } => vec![*x],
            Op::MatMul { a, b } | Op::Binary { a, b, .. } | Op::L1 { a, b } | Op::Mse { a, b } => vec![*a, *b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    /// 2-D convolution over `[n, c_in, h, w]` with a `[c_out, c_in, k_h, k_w]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err("conv2d", format!("input {xs:?} incompatible with kernel {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err("conv2d", format!("bias {:?} for {} output channels", self.shape(b), ws[0])));
            }
        }
        let geom = ConvGeometry::new(xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad).ok_or_else(|| {
            arg_err("conv2d", format!("kernel {ws:?} stride {stride} pad {pad} does not fit input {xs:?}"))
        })?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            xs[0],
            &geom,
            self.value(w).data(),
            ws[0],
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new([xs[0], ws[0], geom.h_out, geom.w_out], out)?;
        self.push(value, Op::Conv2d { x, w, b, geom, batch: xs[0], c_out: ws[0] })
    }

    /// Nearest-neighbour ×2 upsampling of `[n, c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("upsample2x", format!("expected 4-D input, got {s:?}")));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; nc * 4 * h * w];
        for p in 0..nc {
            for i in 0..2 * h {
                let row = &src[(p * h + i / 2) * w..(p * h + i / 2 + 1) * w];
                let dst = &mut out[(p * 2 * h + i) * 2 * w..(p * 2 * h + i + 1) * 2 * w];
                for (j, v) in dst.iter_mut().enumerate() {
                    *v = row[j / 2];
                }
            }
        }
        let value = Tensor::new([s[0], s[1], 2 * h, 2 * w], out)?;
        self.push(value, Op::Upsample2x(x))
    }

    /// Matrix product. `a: [.., m, k]` with `b: [k, n]`, or batched
    /// `a: [bt, m, k]` with `b: [bt, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let bad = || shape_err("matmul", format!("cannot multiply {sa:?} by {sb:?}"));
        if sa.len() < 2 {
            return Err(bad());
        }
        let (value, ok) = match sb.len() {
            2 => {
                let k = sa[sa.len() - 1];
                if k != sb[0] {
                    return Err(bad());
                }
                let m = numel(&sa[..sa.len() - 1]);
                let n = sb[1];
                let mut c = vec![0.0f32; m * n];
                kernels::gemm(m, k, n, 1.0, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut c);
                let mut shape = sa[..sa.len() - 1].to_vec();
                shape.push(n);
                (Tensor::new(shape, c)?, true)
            }
            3 if sa.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] => {
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let mut c = vec![0.0f32; bt * m * n];
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                for i in 0..bt {
                    kernels::gemm(
                        m,
                        k,
                        n,
                        1.0,
                        &ad[i * m * k..(i + 1) * m * k],
                        false,
                        &bd[i * k * n..(i + 1) * k * n],
                        false,
                        0.0,
                        &mut c[i * m * n..(i + 1) * m * n],
                    );
                }
                (Tensor::new([bt, m, n], c)?, true)
            }
            _ => (Tensor::scalar(0.0), false),
        };
        if !ok {
            return Err(bad());
        }
        self.push(value, Op::MatMul { a, b })
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let name = Op::Binary { kind, a, b }.name().to_string();
        let out_shape = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::Shape {
            op: "binary",
            detail: format!("{name}: cannot broadcast {sa:?} with {sb:?}"),
        })?;
        let f: fn(f32, f32) -> f32 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f32> = if sa == out_shape && sb == out_shape {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = kernels::broadcast_index_map(&sa, &out_shape);
            let mb = kernels::broadcast_index_map(&sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(ad[i], bd[j])).collect()
        };
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::Binary { kind, a, b })
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

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x))
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = match kind {
            UnaryKind::Relu => t.map(|v| v.max(0.0)),
            UnaryKind::Gelu => t.map(gelu),
            UnaryKind::Sigmoid => t.map(sigmoid),
            UnaryKind::Tanh => t.map(f32::tanh),
            UnaryKind::Softplus => t.map(softplus),
            UnaryKind::Exp => t.map(f32::exp),
            UnaryKind::Log => t.map(f32::ln),
            UnaryKind::Sqrt => t.map(f32::sqrt),
        };
        self.push(value, Op::Unary { kind, x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("gamma {:?} / beta {:?} for feature size {d}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0f32; xd.len()];
        for (row, orow) in xd.chunks(d).zip(out.chunks_mut(d)) {
            let (mean, rstd) = row_stats(row, eps);
            for j in 0..d {
                orow[j] = ((row[j] as f64 - mean) * rstd) as f32 * gd[j] + bd[j];
            }
        }
        let value = Tensor::new(s, out)?;
        self.push(value, Op::LayerNorm { x, gamma, beta, eps })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| shape_err("softmax", "scalar input"))?;
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; xd.len()];
        for (row, orow) in xd.chunks(d).zip(out.chunks_mut(d)) {
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0f64;
            for (o, &v) in orow.iter_mut().zip(row) {
                let e = ((v - m) as f64).exp();
                *o = e as f32;
                z += e;
            }
            for o in orow.iter_mut() {
                *o = (*o as f64 / z) as f32;
            }
        }
        let value = Tensor::new(s, out)?;
        self.push(value, Op::Softmax(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(arg_err("permute", format!("axes {axes:?} are not a permutation of rank {}", s.len())));
        }
        let (data, shape) = kernels::permute(self.value(x).data(), &s, axes);
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Permute { x, axes: axes.to_vec() })
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(shape_err("permute", "transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| arg_err("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(arg_err("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0f32; numel(&shape)];
        let mut offset = 0;
        for &v in xs {
            let len = self.shape(v)[axis];
            let src = self.value(v).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                out[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat { xs: xs.to_vec(), axis })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(arg_err("slice", format!("range {start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = width;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Slice { x, axis, start })
    }

    /// Gather `indices` along `axis`.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: Arc<Vec<usize>>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(arg_err("index_select", format!("axis {axis} out of range for {s:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[axis]) {
            return Err(arg_err("index_select", format!("index {bad} out of range for axis of {}", s[axis])));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices.iter() {
                out.extend_from_slice(&src[(o * len + i) * inner..(o * len + i + 1) * inner]);
            }
        }
        let mut shape = s;
        shape[axis] = indices.len();
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::IndexSelect { x, axis, indices })
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let xd = self.value(x).data();
        let value = match axis {
            None => {
                let total: f64 = xd.iter().map(|&v| v as f64).sum();
                let n = xd.len().max(1) as f64;
                Tensor::scalar(if mean { total / n } else { total } as f32)
            }
            Some(axis) => {
                if axis >= s.len() {
                    return Err(arg_err("reduce", format!("axis {axis} out of range for {s:?}")));
                }
                let (outer, len, inner) = axis_split(&s, axis);
                let mut out = vec![0.0f32; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = 0.0f64;
                        for l in 0..len {
                            acc += xd[(o * len + l) * inner + i] as f64;
                        }
                        if mean {
                            acc /= len.max(1) as f64;
                        }
                        out[o * inner + i] = acc as f32;
                    }
                }
                let mut shape = s;
                shape[axis] = 1;
                Tensor::new(shape, out)?
            }
        };
        let op = if mean { Op::Mean { x, axis } } else { Op::Sum { x, axis } };
        self.push(value, op)
    }

    /// Sum of all elements (scalar).
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, false)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Some(axis), false)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, true)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Some(axis), true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Mean absolute difference (scalar).
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1", a, b)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let s: f64 = ad.iter().zip(bd).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
        let value = Tensor::scalar((s / ad.len().max(1) as f64) as f32);
        self.push(value, Op::L1 { a, b })
    }

    /// Mean squared difference (scalar).
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let s: f64 = ad.iter().zip(bd).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
        let value = Tensor::scalar((s / ad.len().max(1) as f64) as f32);
        self.push(value, Op::Mse { a, b })
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&ins)?
        };
        self.push(value, Op::Custom { op, inputs: inputs.to_vec() })
    }
}

/// Mean and reciprocal standard deviation of a row, accumulated in f64.
pub(crate) fn row_stats(row: &[f32], eps: f32) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d;
    let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps as f64).sqrt())
}
