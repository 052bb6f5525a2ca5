//! Dense row-major `f64` tensors and the numeric kernels the autodiff
//! layer is built on.
//!
//! Storage is reference counted so cloning a tensor is cheap and tensors can
//! be shared between threads. Kernels always allocate fresh outputs.

use std::fmt;
use std::sync::Arc;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_vec(shape, vec![value; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(&[], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Returns the storage, copying only if it is shared.
    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| shared.as_ref().clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "cannot reshape {:?} to {shape:?}",
            self.shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise binary op with numpy-style broadcasting.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Tensor::from_vec(&self.shape, data);
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape);
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        let (a, b) = (self.data(), other.data());
        walk2(&out_shape, &sa, &sb, |oa, ob| out.push(f(a[oa], b[ob])));
        Tensor::from_vec(&out_shape, out)
    }

    /// Expands the tensor to `shape` following broadcasting rules.
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(
            broadcast_shape(&self.shape, shape),
            shape,
            "cannot broadcast {:?} to {shape:?}",
            self.shape
        );
        let s = broadcast_strides(&self.shape, shape);
        let zero = vec![0; shape.len()];
        let mut out = Vec::with_capacity(shape.iter().product());
        let src = self.data();
        walk2(shape, &s, &zero, |o, _| out.push(src[o]));
        Tensor::from_vec(shape, out)
    }

    /// Sums over broadcast dimensions so the result has `shape`; the adjoint
    /// of [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(
            broadcast_shape(shape, &self.shape),
            self.shape,
            "cannot reduce {:?} to {shape:?}",
            self.shape
        );
        let s = broadcast_strides(shape, &self.shape);
        let zero = vec![0; self.ndim()];
        let mut out = vec![0.0; shape.iter().product()];
        let src = self.data();
        let mut i = 0;
        walk2(&self.shape, &s, &zero, |o, _| {
            out[o] += src[i];
            i += 1;
        });
        Tensor::from_vec(shape, out)
    }

    /// `op(a) · op(b)` for 2-D tensors, where `op` optionally transposes.
    pub fn matmul(&self, other: &Tensor, trans_a: bool, trans_b: bool) -> Tensor {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-D");
        assert_eq!(other.ndim(), 2, "matmul rhs must be 2-D");
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (other.shape[0], other.shape[1]);
        let (m, k, rsa, csa) = if trans_a {
            (ac, ar, 1, ac)
        } else {
            (ar, ac, ac, 1)
        };
        let (k2, n, rsb, csb) = if trans_b {
            (bc, br, 1, bc)
        } else {
            (br, bc, bc, 1)
        };
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.data(),
            rsa,
            csa,
            other.data(),
            rsb,
            csb,
            &mut out,
            n,
            1,
            false,
        );
        Tensor::from_vec(&[m, n], out)
    }

    /// Reads `self.data[idx[i]]` into a tensor of `shape`.
    pub fn gather(&self, idx: &[usize], shape: &[usize]) -> Tensor {
        let src = self.data();
        Tensor::from_vec(shape, idx.iter().map(|&i| src[i]).collect())
    }

    /// Adjoint of [`Tensor::gather`]: accumulates into a zero tensor of `shape`.
    pub fn scatter_add(&self, idx: &[usize], shape: &[usize]) -> Tensor {
        let mut out = vec![0.0; shape.iter().product()];
        for (&i, &v) in idx.iter().zip(self.data()) {
            out[i] += v;
        }
        Tensor::from_vec(shape, out)
    }

    /// Index of the largest entry in each row of a 2-D tensor.
    pub fn argmax_rows(&self) -> Vec<usize> {
        assert_eq!(self.ndim(), 2);
        let cols = self.shape[1];
        self.data
            .chunks(cols)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    /// Rows `start..end` along the leading dimension.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::from_vec(&shape, self.data[start * row..end * row].to_vec())
    }

    /// Concatenates tensors along the leading dimension.
    pub fn stack_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tail = parts[0].shape[1..].to_vec();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.shape[1..], tail[..], "stack_rows shape mismatch");
            rows += p.shape[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Tensor::from_vec(&shape, data)
    }
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} are not broadcastable"),
            }
        })
        .collect()
}

/// Strides for reading a tensor of `shape` as if it had `out` shape.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Visits every index of `shape` in row-major order, passing the offsets the
/// two stride vectors map it to.
fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    // merge dimensions that are laid out contiguously for both operands
    let mut dims: Vec<(usize, usize, usize)> = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        if shape[i] == 1 {
            continue;
        }
        if let Some(last) = dims.last_mut() {
            if last.1 == sa[i] * shape[i] && last.2 == sb[i] * shape[i] {
                last.0 *= shape[i];
                last.1 = sa[i];
                last.2 = sb[i];
                continue;
            }
        }
        dims.push((shape[i], sa[i], sb[i]));
    }
    if dims.is_empty() {
        f(0, 0);
        return;
    }
    let nd = dims.len();
    let (inner, ia, ib) = dims[nd - 1];
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    loop {
        for j in 0..inner {
            f(oa + j * ia, ob + j * ib);
        }
        let mut d = nd - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += dims[d].1;
            ob += dims[d].2;
            if idx[d] < dims[d].0 {
                break;
            }
            oa -= dims[d].1 * dims[d].0;
            ob -= dims[d].2 * dims[d].0;
            idx[d] = 0;
        }
    }
}

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
    c: &mut [f64],
    rsc: usize,
    csc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides and extents were derived from the slice lengths by the
    // callers; matrixmultiply reads/writes exactly m*k, k*n and m*n elements.
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
            rsc as isize,
            csc as isize,
        );
    }
}

/// Stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        assert!(stride >= 1);
        ConvGeom { stride, pad }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        assert!(
            input + 2 * self.pad >= kernel,
            "kernel {kernel} larger than padded input {input}"
        );
        (input + 2 * self.pad - kernel) / self.stride + 1
    }
}

struct Im2Col {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `oj` whose input column `oj*s - p + kj` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.geom.stride, self.geom.pad);
        // smallest oj with oj*s + kj >= p
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        // largest oj with oj*s + kj - p <= w - 1
        let hi = if self.w + p > kj {
            ((self.w + p - kj - 1) / s + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Writes the patch matrix of one sample into columns
    /// `off..off + cols()` of a row-major buffer with row length `ld`.
    fn unfold(&self, x: &[f64], out: &mut [f64], ld: usize, off: usize) {
        let (s, p) = (self.geom.stride, self.geom.pad);
        let ncol = self.cols();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut out[row * ld + off..row * ld + off + ncol];
                    let (lo, hi) = self.valid_cols(kj);
                    for oi in 0..self.ho {
                        let line = &mut dst[oi * self.wo..(oi + 1) * self.wo];
                        let ii = oi * s + ki;
                        if ii < p || ii - p >= self.h {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[(ii - p) * self.w..(ii - p + 1) * self.w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        let start = lo * s + kj - p;
                        if s == 1 {
                            line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (k, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[start + k * s];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Im2Col::unfold`].
    fn fold_add(&self, cols: &[f64], ld: usize, off: usize, x: &mut [f64]) {
        let (s, p) = (self.geom.stride, self.geom.pad);
        let ncol = self.cols();
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ld + off..row * ld + off + ncol];
                    let (lo, hi) = self.valid_cols(kj);
                    for oi in 0..self.ho {
                        let ii = oi * s + ki;
                        if ii < p || ii - p >= self.h {
                            continue;
                        }
                        let dst = &mut plane[(ii - p) * self.w..(ii - p + 1) * self.w];
                        let line = &src[oi * self.wo..(oi + 1) * self.wo];
                        let start = lo * s + kj - p;
                        for (k, v) in line[lo..hi].iter().enumerate() {
                            dst[start + k * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Samples per patch matrix: small feature maps are batched until a gemm
/// has at least 256 columns; large ones run one sample at a time.
fn group_size(ncol: usize, n: usize) -> usize {
    (256 / ncol.max(1)).clamp(1, n.max(1))
}

/// `[N, O, L]` ↔ `[O, N·L]` block transpose.
fn swap_outer(src: &[f64], a: usize, b: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; a * b * l];
    for i in 0..a {
        for j in 0..b {
            out[(j * a + i) * l..(j * a + i + 1) * l].copy_from_slice(&src[(i * b + j) * l..(i * b + j + 1) * l]);
        }
    }
    out
}

/// Cross-correlation of `x [N,C,H,W]` with `w [O,C,kh,kw]`.
pub fn conv2d(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let [n, c, h, wd] = dims4(x);
    let [o, wc, kh, kw] = dims4(w);
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
    let im = Im2Col {
        c,
        h,
        w: wd,
        kh,
        kw,
        ho: geom.out_len(h, kh),
        wo: geom.out_len(wd, kw),
        geom,
    };
    let (rows, ncol) = (im.rows(), im.cols());
    let plane = c * h * wd;
    let gs = group_size(ncol, n);
    let mut out = Vec::with_capacity(n * o * ncol);
    for b0 in (0..n).step_by(gs) {
        let m = gs.min(n - b0);
        let ld = m * ncol;
        let mut cols = vec![0.0; rows * ld];
        for b in 0..m {
            im.unfold(&x.data()[(b0 + b) * plane..(b0 + b + 1) * plane], &mut cols, ld, b * ncol);
        }
        let mut y = vec![0.0; o * ld];
        gemm(o, rows, ld, w.data(), rows, 1, &cols, ld, 1, &mut y, ld, 1, false);
        out.extend(swap_outer(&y, o, m, ncol));
    }
    Tensor::from_vec(&[n, o, im.ho, im.wo], out)
}

/// Adjoint of [`conv2d`] in its input: maps `g [N,O,Ho,Wo]` back to
/// `[N,C,H,W]`. This is also the forward pass of a transposed convolution.
pub fn conv2d_input_grad(g: &Tensor, w: &Tensor, geom: ConvGeom, hw: (usize, usize)) -> Tensor {
    let [n, o, ho, wo] = dims4(g);
    let [wo_ch, c, kh, kw] = dims4(w);
    assert_eq!(o, wo_ch, "transposed conv channel mismatch: input {o}, weight {wo_ch}");
    let im = Im2Col {
        c,
        h: hw.0,
        w: hw.1,
        kh,
        kw,
        ho,
        wo,
        geom,
    };
    assert_eq!(geom.out_len(hw.0, kh), ho, "inconsistent transposed conv height");
    assert_eq!(geom.out_len(hw.1, kw), wo, "inconsistent transposed conv width");
    let (rows, ncol) = (im.rows(), im.cols());
    let plane = c * hw.0 * hw.1;
    let gs = group_size(ncol, n);
    let mut out = vec![0.0; n * plane];
    for b0 in (0..n).step_by(gs) {
        let m = gs.min(n - b0);
        let ld = m * ncol;
        let gg = swap_outer(&g.data()[b0 * o * ncol..(b0 + m) * o * ncol], m, o, ncol);
        // cols = wᵀ · g
        let mut cols = vec![0.0; rows * ld];
        gemm(rows, o, ld, w.data(), 1, rows, &gg, ld, 1, &mut cols, ld, 1, false);
        for b in 0..m {
            im.fold_add(&cols, ld, b * ncol, &mut out[(b0 + b) * plane..(b0 + b + 1) * plane]);
        }
    }
    Tensor::from_vec(&[n, c, hw.0, hw.1], out)
}

/// Adjoint of [`conv2d`] in its weight: `Σ_b g_b · unfold(x_b)ᵀ`.
pub fn conv2d_weight_grad(x: &Tensor, g: &Tensor, geom: ConvGeom, k: (usize, usize)) -> Tensor {
    let [n, c, h, wd] = dims4(x);
    let [gn, o, ho, wo] = dims4(g);
    assert_eq!(n, gn, "batch mismatch in conv weight gradient");
    let im = Im2Col {
        c,
        h,
        w: wd,
        kh: k.0,
        kw: k.1,
        ho,
        wo,
        geom,
    };
    let (rows, ncol) = (im.rows(), im.cols());
    let plane = c * h * wd;
    let gs = group_size(ncol, n);
    let mut out = vec![0.0; o * rows];
    for b0 in (0..n).step_by(gs) {
        let m = gs.min(n - b0);
        let ld = m * ncol;
        let mut cols = vec![0.0; rows * ld];
        for b in 0..m {
            im.unfold(&x.data()[(b0 + b) * plane..(b0 + b + 1) * plane], &mut cols, ld, b * ncol);
        }
        let gg = swap_outer(&g.data()[b0 * o * ncol..(b0 + m) * o * ncol], m, o, ncol);
        gemm(o, ld, rows, &gg, ld, 1, &cols, 1, ld, &mut out, rows, 1, b0 > 0);
    }
    Tensor::from_vec(&[o, c, k.0, k.1], out)
}

/// Flat indices of the maxima of non-overlapping `size × size` windows.
pub fn max_pool2d_indices(x: &Tensor, size: usize) -> (Vec<usize>, Vec<usize>) {
    let [n, c, h, w] = dims4(x);
    let (ho, wo) = (h / size, w / size);
    let data = x.data();
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..ho {
            for oj in 0..wo {
                let mut best = base + oi * size * w + oj * size;
                for di in 0..size {
                    for dj in 0..size {
                        let at = base + (oi * size + di) * w + oj * size + dj;
                        if data[at] > data[best] {
                            best = at;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    (idx, vec![n, c, ho, wo])
}

pub(crate) fn dims4(t: &Tensor) -> [usize; 4] {
    match t.shape() {
        &[a, b, c, d] => [a, b, c, d],
        s => panic!("expected a 4-D tensor, got shape {s:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
        let [n, c, h, wd] = dims4(x);
        let [o, _, kh, kw] = dims4(w);
        let (ho, wo) = (geom.out_len(h, kh), geom.out_len(wd, kw));
        let mut out = vec![0.0; n * o * ho * wo];
        for b in 0..n {
            for oc in 0..o {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = (i * geom.stride + ki) as isize - geom.pad as isize;
                                    let jj = (j * geom.stride + kj) as isize - geom.pad as isize;
                                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ic) * h + ii as usize) * wd + jj as usize]
                                        * w.data()[((oc * c + ic) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((b * o + oc) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[n, o, ho, wo], out)
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 101) as f64 - 50.0) * scale).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_naive_loop() {
        for &(s, p, k) in &[(1, 1, 3), (2, 1, 4), (1, 0, 4), (2, 0, 3)] {
            let geom = ConvGeom::new(s, p);
            let x = ramp(&[2, 3, 8, 8], 0.01);
            let w = ramp(&[4, 3, k, k], 0.02);
            let fast = conv2d(&x, &w, geom);
            let slow = naive_conv(&x, &w, geom);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "s={s} p={p} k={k}");
        }
    }

    #[test]
    fn conv_adjoints_satisfy_inner_product_identity() {
        let geom = ConvGeom::new(2, 1);
        let x = ramp(&[2, 3, 8, 8], 0.01);
        let w = ramp(&[5, 3, 4, 4], 0.03);
        let y = conv2d(&x, &w, geom);
        let g = ramp(y.shape(), 0.005);
        let lhs = dot(&g, &y);
        let gx = conv2d_input_grad(&g, &w, geom, (8, 8));
        let gw = conv2d_weight_grad(&x, &g, geom, (4, 4));
        assert!((lhs - dot(&gx, &x)).abs() < 1e-9);
        assert!((lhs - dot(&gw, &w)).abs() < 1e-9);
    }

    #[test]
    fn broadcast_and_reduce_are_adjoint() {
        let a = ramp(&[1, 3, 1, 1], 0.1);
        let big = a.broadcast_to(&[2, 3, 4, 4]);
        assert_eq!(big.shape(), &[2, 3, 4, 4]);
        let back = big.sum_to(&[1, 3, 1, 1]);
        for (x, y) in back.data().iter().zip(a.data()) {
            assert!((x - 32.0 * y).abs() < 1e-12);
        }
        let row = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let col = Tensor::from_vec(&[2, 1], vec![10.0, 20.0]);
        let sum = row.zip_with(&col, |a, b| a + b);
        assert_eq!(sum.data(), &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn matmul_transposes() {
        let a = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::from_vec(&[3, 2], vec![1., 0., 0., 1., 1., 1.]);
        assert_eq!(a.matmul(&b, false, false).data(), &[4., 5., 10., 11.]);
        let at = Tensor::from_vec(&[3, 2], vec![1., 4., 2., 5., 3., 6.]);
        assert_eq!(at.matmul(&b, true, false).data(), &[4., 5., 10., 11.]);
        let bt = Tensor::from_vec(&[2, 3], vec![1., 0., 1., 0., 1., 1.]);
        assert_eq!(a.matmul(&bt, false, true).data(), &[4., 5., 10., 11.]);
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 8.]);
        let (idx, shape) = max_pool2d_indices(&x, 2);
        assert_eq!(shape, vec![1, 1, 1, 2]);
        assert_eq!(x.gather(&idx, &shape).data(), &[5., 9.]);
    }
}
