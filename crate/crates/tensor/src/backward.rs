use crate::error::{Result, TensorError};
use crate::graph::{axis_split, gelu_grad, row_stats, sigmoid, BinaryKind, Graph, Op, UnaryKind, Var};
use crate::kernels;
use crate::tensor::{numel, Tensor};

/// Gradients of a scalar loss with respect to the leaves of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shapes[v.index()].clone()))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.index()].take().unwrap_or_else(|| Tensor::zeros(self.shapes[v.index()].clone()))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Graph {
    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.backward_from(loss, Tensor::full(lv.shape().to_vec(), 1.0))
    }

    /// Reverse-mode sweep seeded with an arbitrary cotangent for `output`.
    pub fn backward_from(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.shape(output) {
            return Err(TensorError::Shape {
                op: "backward",
                detail: format!("seed {:?} for output {:?}", seed.shape(), self.shape(output)),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[output.index()] = Some(seed);
        for i in (0..=output.index()).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.vjp(i, &g)?;
            for (v, cg) in contributions {
                if self.nodes[v.index()].requires_grad {
                    accumulate(&mut grads[v.index()], cg);
                }
            }
        }
        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn vjp(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        let need = |v: Var| self.nodes[v.index()].requires_grad;
        let mut res = Vec::new();
        match &node.op {
            Op::Input => {}
            Op::Conv2d { x, w, b, geom, batch, c_out } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    *batch,
                    geom,
                    self.value(*w).data(),
                    *c_out,
                    gd,
                    need(*x),
                );
                if need(*x) {
                    res.push((*x, Tensor::new(self.shape(*x).to_vec(), dx)?));
                }
                if need(*w) {
                    res.push((*w, Tensor::new(self.shape(*w).to_vec(), dw)?));
                }
                if let Some(b) = b {
                    if need(*b) {
                        res.push((*b, Tensor::new([*c_out], db)?));
                    }
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let mut dx = vec![0.0f32; nc * h * w];
                for p in 0..nc {
                    for r in 0..2 * h {
                        for c in 0..2 * w {
                            dx[(p * h + r / 2) * w + c / 2] += gd[(p * 2 * h + r) * 2 * w + c];
                        }
                    }
                }
                res.push((*x, Tensor::new(s.to_vec(), dx)?));
            }
            Op::MatMul { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if sb.len() == 2 {
                    let (k, n) = (sb[0], sb[1]);
                    let m = numel(&sa) / k;
                    if need(*a) {
                        let mut da = vec![0.0f32; m * k];
                        kernels::gemm(m, n, k, 1.0, gd, false, bd, true, 0.0, &mut da);
                        res.push((*a, Tensor::new(sa.clone(), da)?));
                    }
                    if need(*b) {
                        let mut db = vec![0.0f32; k * n];
                        kernels::gemm(k, m, n, 1.0, ad, true, gd, false, 0.0, &mut db);
                        res.push((*b, Tensor::new(sb.clone(), db)?));
                    }
                } else {
                    let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                    let mut da = vec![0.0f32; if need(*a) { bt * m * k } else { 0 }];
                    let mut db = vec![0.0f32; if need(*b) { bt * k * n } else { 0 }];
                    for t in 0..bt {
                        let gt = &gd[t * m * n..(t + 1) * m * n];
                        if need(*a) {
                            let bt_ = &bd[t * k * n..(t + 1) * k * n];
                            kernels::gemm(m, n, k, 1.0, gt, false, bt_, true, 0.0, &mut da[t * m * k..(t + 1) * m * k]);
                        }
                        if need(*b) {
                            let at = &ad[t * m * k..(t + 1) * m * k];
                            kernels::gemm(k, m, n, 1.0, at, true, gt, false, 0.0, &mut db[t * k * n..(t + 1) * k * n]);
                        }
                    }
                    if need(*a) {
                        res.push((*a, Tensor::new(sa, da)?));
                    }
                    if need(*b) {
                        res.push((*b, Tensor::new(sb, db)?));
                    }
                }
            }
            Op::Binary { kind, a, b } => {
                let os = out.shape();
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let same = sa == os && sb == os;
                let ma = if same { Vec::new() } else { kernels::broadcast_index_map(sa, os) };
                let mb = if same { Vec::new() } else { kernels::broadcast_index_map(sb, os) };
                let av = |k: usize| if same { ad[k] } else { ad[ma[k]] };
                let bv = |k: usize| if same { bd[k] } else { bd[mb[k]] };
                if need(*a) {
                    let ga: Vec<f32> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => gd.to_vec(),
                        BinaryKind::Mul => (0..gd.len()).map(|k| gd[k] * bv(k)).collect(),
                        BinaryKind::Div => (0..gd.len()).map(|k| gd[k] / bv(k)).collect(),
                    };
                    res.push((*a, Tensor::new(sa.to_vec(), kernels::reduce_broadcast(&ga, os, sa))?));
                }
                if need(*b) {
                    let gb: Vec<f32> = match kind {
                        BinaryKind::Add => gd.to_vec(),
                        BinaryKind::Sub => gd.iter().map(|v| -v).collect(),
                        BinaryKind::Mul => (0..gd.len()).map(|k| gd[k] * av(k)).collect(),
                        BinaryKind::Div => (0..gd.len())
                            .map(|k| {
                                let y = bv(k);
                                -gd[k] * av(k) / (y * y)
                            })
                            .collect(),
                    };
                    res.push((*b, Tensor::new(sb.to_vec(), kernels::reduce_broadcast(&gb, os, sb))?));
                }
            }
            Op::Scale { x, factor } => res.push((*x, g.map(|v| v * factor))),
            Op::AddScalar(x) => res.push((*x, g.clone())),
            Op::Unary { kind, x } => {
                let xd = self.value(*x).data();
                let yd = out.data();
                let dx: Vec<f32> = (0..gd.len())
                    .map(|k| {
                        let d = match kind {
                            UnaryKind::Relu => {
                                if xd[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Gelu => gelu_grad(xd[k]),
                            UnaryKind::Sigmoid => yd[k] * (1.0 - yd[k]),
                            UnaryKind::Tanh => 1.0 - yd[k] * yd[k],
                            UnaryKind::Softplus => sigmoid(xd[k]),
                            UnaryKind::Exp => yd[k],
                            UnaryKind::Log => 1.0 / xd[k],
                            UnaryKind::Sqrt => 0.5 / yd[k],
                        };
                        gd[k] * d
                    })
                    .collect();
                res.push((*x, Tensor::new(out.shape().to_vec(), dx)?));
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let s = self.shape(*x);
                let d = *s.last().unwrap_or(&1);
                let (xd, gam) = (self.value(*x).data(), self.value(*gamma).data());
                let mut dx = vec![0.0f32; xd.len()];
                let mut dg = vec![0.0f64; d];
                let mut dbeta = vec![0.0f64; d];
                for ((row, grow), dxrow) in xd.chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                    let (mean, rstd) = row_stats(row, *eps);
                    let mut sum_dxhat = 0.0f64;
                    let mut sum_dxhat_xhat = 0.0f64;
                    for j in 0..d {
                        let xhat = (row[j] as f64 - mean) * rstd;
                        let dxhat = grow[j] as f64 * gam[j] as f64;
                        dg[j] += grow[j] as f64 * xhat;
                        dbeta[j] += grow[j] as f64;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let (m1, m2) = (sum_dxhat / d as f64, sum_dxhat_xhat / d as f64);
                    for j in 0..d {
                        let xhat = (row[j] as f64 - mean) * rstd;
                        let dxhat = grow[j] as f64 * gam[j] as f64;
                        dxrow[j] = (rstd * (dxhat - m1 - xhat * m2)) as f32;
                    }
                }
                if need(*x) {
                    res.push((*x, Tensor::new(s.to_vec(), dx)?));
                }
                if need(*gamma) {
                    res.push((*gamma, Tensor::new([d], dg.into_iter().map(|v| v as f32).collect())?));
                }
                if need(*beta) {
                    res.push((*beta, Tensor::new([d], dbeta.into_iter().map(|v| v as f32).collect())?));
                }
            }
            Op::Softmax(x) => {
                let d = *out.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0f32; gd.len()];
                for ((y, gr), dxr) in out.data().chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: f64 = y.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
                    for j in 0..d {
                        dxr[j] = (y[j] as f64 * (gr[j] as f64 - dot)) as f32;
                    }
                }
                res.push((*x, Tensor::new(out.shape().to_vec(), dx)?));
            }
            Op::Reshape(x) => res.push((*x, g.clone().reshape(self.shape(*x).to_vec())?)),
            Op::Permute { x, axes } => {
                let (d, s) = kernels::permute(gd, g.shape(), &kernels::inverse_permutation(axes));
                res.push((*x, Tensor::new(s, d)?));
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if need(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            d.extend_from_slice(&gd[src..src + len * inner]);
                        }
                        res.push((v, Tensor::new(self.shape(v).to_vec(), d)?));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, len, inner) = axis_split(s, *axis);
                let width = out.shape()[*axis];
                let mut dx = vec![0.0f32; numel(s)];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    dx[dst..dst + width * inner].copy_from_slice(&gd[o * width * inner..(o + 1) * width * inner]);
                }
                res.push((*x, Tensor::new(s.to_vec(), dx)?));
            }
            Op::IndexSelect { x, axis, indices } => {
                let s = self.shape(*x);
                let (outer, len, inner) = axis_split(s, *axis);
                let mut dx = vec![0.0f32; numel(s)];
                let width = indices.len();
                for o in 0..outer {
                    for (k, &idx) in indices.iter().enumerate() {
                        let src = &gd[(o * width + k) * inner..(o * width + k + 1) * inner];
                        let dst = &mut dx[(o * len + idx) * inner..(o * len + idx + 1) * inner];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += *b;
                        }
                    }
                }
                res.push((*x, Tensor::new(s.to_vec(), dx)?));
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let mean = matches!(node.op, Op::Mean { .. });
                let s = self.shape(*x);
                let dx = match axis {
                    None => {
                        let v = if mean { gd[0] / numel(s).max(1) as f32 } else { gd[0] };
                        vec![v; numel(s)]
                    }
                    Some(axis) => {
                        let (outer, len, inner) = axis_split(s, *axis);
                        let scale = if mean { 1.0 / len.max(1) as f32 } else { 1.0 };
                        let mut dx = vec![0.0f32; numel(s)];
                        for o in 0..outer {
                            for l in 0..len {
                                for k in 0..inner {
                                    dx[(o * len + l) * inner + k] = gd[o * inner + k] * scale;
                                }
                            }
                        }
                        dx
                    }
                };
                res.push((*x, Tensor::new(s.to_vec(), dx)?));
            }
            Op::L1 { a, b } | Op::Mse { a, b } => {
                let l1 = matches!(node.op, Op::L1 { .. });
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let n = ad.len().max(1) as f32;
                let scale = gd[0] / n;
                let da: Vec<f32> = ad
                    .iter()
                    .zip(bd)
                    .map(|(&x, &y)| {
                        let diff = x - y;
                        if l1 {
                            if diff > 0.0 {
                                scale
                            } else if diff < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        } else {
                            2.0 * diff * scale
                        }
                    })
                    .collect();
                if need(*b) {
                    res.push((*b, Tensor::new(self.shape(*b).to_vec(), da.iter().map(|v| -v).collect())?));
                }
                if need(*a) {
                    res.push((*a, Tensor::new(self.shape(*a).to_vec(), da)?));
                }
            }
            Op::Custom { op, inputs } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = op.backward(&ins, out, g)?;
                if grads.len() != inputs.len() {
                    return Err(TensorError::Custom {
                        name: op.name().to_string(),
                        detail: format!("returned {} gradients for {} inputs", grads.len(), inputs.len()),
                    });
                }
                for (v, gr) in inputs.iter().zip(grads) {
                    if let Some(gr) = gr {
                        if gr.shape() != self.shape(*v) {
                            return Err(TensorError::Custom {
                                name: op.name().to_string(),
                                detail: format!("gradient {:?} for input {:?}", gr.shape(), self.shape(*v)),
                            });
                        }
                        res.push((*v, gr));
                    }
                }
            }
        }
        Ok(res)
    }
}
