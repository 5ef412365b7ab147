//! Raw buffer kernels shared by the graph's forward and backward passes.

use crate::tensor::{numel, strides};

/// `c = alpha·op(a)·op(b) + beta·c` for row-major buffers, where `op(a)` is
/// `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths bound every strided access for the given
    // (m, k, n) and transposition flags.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(c_in: usize, h: usize, w: usize, k_h: usize, k_w: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k_h || w + 2 * pad < k_w {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            k_h,
            k_w,
            stride,
            pad,
            h_out: (h + 2 * pad - k_h) / stride + 1,
            w_out: (w + 2 * pad - k_w) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.k_h * self.k_w
    }

    pub fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one image `[c_in, h, w]` into `[c_in·k_h·k_w, h_out·w_out]`.
pub fn im2col(x: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let plane = g.col_cols();
    for ci in 0..g.c_in {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k_h {
            for kw in 0..g.k_w {
                let row = (ci * g.k_h + kh) * g.k_w + kw;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= g.w as isize { 0.0 } else { src_row[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
pub fn col2im_add(cols: &[f32], g: &ConvGeometry, dx: &mut [f32]) {
    let plane = g.col_cols();
    for ci in 0..g.c_in {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k_h {
            for kw in 0..g.k_w {
                let row = (ci * g.k_h + kh) * g.k_w + kw;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst_row[iw as usize] += src[oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Batched 2-D convolution. `x: [n, c_in, h, w]`, `weight: [c_out, c_in, k_h, k_w]`.
pub fn conv2d_forward(
    x: &[f32],
    batch: usize,
    g: &ConvGeometry,
    weight: &[f32],
    c_out: usize,
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let in_sz = g.c_in * g.h * g.w;
    let plane = g.col_cols();
    let mut out = vec![0.0f32; batch * c_out * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; g.col_rows() * plane] };
    for n in 0..batch {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let on = &mut out[n * c_out * plane..(n + 1) * c_out * plane];
        if let Some(b) = bias {
            for (co, chunk) in on.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[co]);
            }
        }
        let cols_ref: &[f32] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(c_out, g.col_rows(), plane, 1.0, weight, false, cols_ref, false, 1.0, on);
    }
    out
}

/// Gradients of [`conv2d_forward`]: returns `(dx, dweight, dbias)`.
pub fn conv2d_backward(
    x: &[f32],
    batch: usize,
    g: &ConvGeometry,
    weight: &[f32],
    c_out: usize,
    dout: &[f32],
    need_dx: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let in_sz = g.c_in * g.h * g.w;
    let plane = g.col_cols();
    let rows = g.col_rows();
    let mut dx = if need_dx { vec![0.0f32; batch * in_sz] } else { Vec::new() };
    let mut dw = vec![0.0f32; c_out * rows];
    let mut db64 = vec![0.0f64; c_out];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; rows * plane] };
    let mut dcols = vec![0.0f32; rows * plane];
    for n in 0..batch {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let dn = &dout[n * c_out * plane..(n + 1) * c_out * plane];
        for (co, chunk) in dn.chunks(plane).enumerate() {
            db64[co] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        let cols_ref: &[f32] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(c_out, plane, rows, 1.0, dn, false, cols_ref, true, 1.0, &mut dw);
        if need_dx {
            let dxn = &mut dx[n * in_sz..(n + 1) * in_sz];
            if g.is_pointwise() {
                gemm(rows, c_out, plane, 1.0, weight, true, dn, false, 1.0, dxn);
            } else {
                gemm(rows, c_out, plane, 1.0, weight, true, dn, false, 0.0, &mut dcols);
                col2im_add(&dcols, g, dxn);
            }
        }
    }
    (dx, dw, db64.into_iter().map(|v| v as f32).collect())
}

/// Output shape of numpy-style broadcasting, or `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the linear index of the broadcast source
/// element in a tensor of shape `in_shape`.
pub fn broadcast_index_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0usize; nd];
    for i in 0..nd {
        if i + in_shape.len() >= nd {
            let j = i + in_shape.len() - nd;
            if in_shape[j] != 1 {
                eff[i] = in_strides[j];
            }
        }
    }
    let total = numel(out_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Sum `grad` (shaped like the broadcast output) back onto `in_shape`.
pub fn reduce_broadcast(grad: &[f32], out_shape: &[usize], in_shape: &[usize]) -> Vec<f32> {
    if in_shape == out_shape {
        return grad.to_vec();
    }
    let map = broadcast_index_map(in_shape, out_shape);
    let mut acc = vec![0.0f64; numel(in_shape)];
    for (g, &src) in grad.iter().zip(&map) {
        acc[src] += *g as f64;
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Permute axes: output axis `i` is input axis `axes[i]`.
pub fn permute(data: &[f32], shape: &[usize], axes: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let nd = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..total {
        out.push(data[src]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
