//! Dense row-major `f64` tensors and the raw numeric kernels the graph ops call.
//!
//! Kernels here know nothing about differentiation. Shape errors are programming
//! errors at this level and panic; callers validate user-facing shapes first.

use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Geometry of a 2-D convolution, shared by the three convolution kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        ConvGeom { stride, pad }
    }

    /// Output extent for an input extent and kernel size, or `None` when the
    /// kernel does not fit.
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(numel(shape), self.numel(), "cannot reshape {:?} to {:?}", self.shape, shape);
        Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "stack of zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].numel());
        for t in items {
            assert_eq!(t.shape, inner, "stack shape mismatch");
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor { shape, data }
    }

    /// Slice `index` along the leading axis.
    pub fn index_first(&self, index: usize) -> Tensor {
        let inner: usize = numel(&self.shape[1..]);
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    pub fn transpose2(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "transpose2 expects a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(self.ndim() == 2 && other.ndim() == 2, "matmul expects matrices");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Tensor::new(vec![m, n], out)
    }

    /// Sum over every axis whose `keep` flag is false; kept axes stay in order.
    pub fn sum_axes(&self, keep: &[bool]) -> Tensor {
        assert_eq!(keep.len(), self.ndim());
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&d, _)| d)
            .collect();
        let map = AxisMap::new(&self.shape, keep);
        let mut out = vec![0.0; numel(&out_shape)];
        for (i, &v) in self.data.iter().enumerate() {
            out[map.reduced_index(i)] += v;
        }
        Tensor::new(out_shape, out)
    }

    /// Inverse-shape of [`Tensor::sum_axes`]: replicate along the dropped axes.
    pub fn broadcast_axes(&self, shape: &[usize], keep: &[bool]) -> Tensor {
        assert_eq!(keep.len(), shape.len());
        let expect: Vec<usize> = shape
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&d, _)| d)
            .collect();
        assert_eq!(expect, self.shape, "broadcast source shape mismatch");
        let map = AxisMap::new(shape, keep);
        let data = (0..numel(shape))
            .map(|i| self.data[map.reduced_index(i)])
            .collect();
        Tensor::new(shape.to_vec(), data)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let full = self.shape[axis];
        assert!(start + len <= full, "narrow out of range");
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Tensor::new(shape, data)
    }

    /// Adjoint of [`Tensor::narrow`]: place `self` at `start` inside zeros of
    /// extent `full` along `axis`.
    pub fn embed(&self, axis: usize, start: usize, full: usize) -> Tensor {
        let len = self.shape[axis];
        assert!(start + len <= full, "embed out of range");
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let mut shape = self.shape.clone();
        shape[axis] = full;
        let mut data = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        Tensor::new(shape, data)
    }

    pub fn concat(items: &[&Tensor], axis: usize) -> Tensor {
        assert!(!items.is_empty());
        let first = items[0].shape();
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut total = 0;
        for t in items {
            assert_eq!(t.ndim(), first.len());
            for (d, (&a, &b)) in t.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch");
            }
            total += t.shape()[axis];
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in items {
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(shape, data)
    }

    /// Edge-replicating spatial padding of an `[N, C, H, W]` tensor.
    pub fn pad_replicate(&self, pad: usize) -> Tensor {
        let (n, c, h, w) = dims4(self);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![0.0; n * c * ph * pw];
        for plane in 0..n * c {
            let src = &self.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ph * pw..(plane + 1) * ph * pw];
            for r in 0..ph {
                let sr = r.saturating_sub(pad).min(h - 1);
                for col in 0..pw {
                    let sc = col.saturating_sub(pad).min(w - 1);
                    dst[r * pw + col] = src[sr * w + sc];
                }
            }
        }
        Tensor::new(vec![n, c, ph, pw], out)
    }

    /// Adjoint of [`Tensor::pad_replicate`]: fold border values back onto the
    /// edge pixels they were copied from.
    pub fn pad_replicate_adjoint(&self, pad: usize) -> Tensor {
        let (n, c, ph, pw) = dims4(self);
        let (h, w) = (ph - 2 * pad, pw - 2 * pad);
        let mut out = vec![0.0; n * c * h * w];
        for plane in 0..n * c {
            let src = &self.data[plane * ph * pw..(plane + 1) * ph * pw];
            let dst = &mut out[plane * h * w..(plane + 1) * h * w];
            for r in 0..ph {
                let sr = r.saturating_sub(pad).min(h - 1);
                for col in 0..pw {
                    let sc = col.saturating_sub(pad).min(w - 1);
                    dst[sr * w + sc] += src[r * pw + col];
                }
            }
        }
        Tensor::new(vec![n, c, h, w], out)
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Tensor {
        let (n, c, h, w) = dims4(self);
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &self.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for r in 0..oh {
                for col in 0..ow {
                    dst[r * ow + col] = src[(r / factor) * w + col / factor];
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    /// Adjoint of [`Tensor::upsample_nearest`]: non-overlapping block sums.
    pub fn sum_pool(&self, factor: usize) -> Tensor {
        let (n, c, oh, ow) = dims4(self);
        assert!(oh % factor == 0 && ow % factor == 0, "sum_pool size not divisible");
        let (h, w) = (oh / factor, ow / factor);
        let mut out = vec![0.0; n * c * h * w];
        for plane in 0..n * c {
            let src = &self.data[plane * oh * ow..(plane + 1) * oh * ow];
            let dst = &mut out[plane * h * w..(plane + 1) * h * w];
            for r in 0..oh {
                for col in 0..ow {
                    dst[(r / factor) * w + col / factor] += src[r * ow + col];
                }
            }
        }
        Tensor::new(vec![n, c, h, w], out)
    }

    /// Cross-correlation of `[N, Ci, H, W]` input with `[Co, Ci, KH, KW]` weights.
    pub fn conv2d(&self, weight: &Tensor, geom: ConvGeom) -> Tensor {
        let (n, ci, h, w) = dims4(self);
        let (co, wci, kh, kw) = dims4(weight);
        assert_eq!(ci, wci, "conv2d channel mismatch");
        let oh = geom.out_len(h, kh).expect("conv2d kernel larger than input");
        let ow = geom.out_len(w, kw).expect("conv2d kernel larger than input");
        let ckk = ci * kh * kw;
        let hw_out = oh * ow;
        let mut out = vec![0.0; n * co * hw_out];
        out.par_chunks_mut(co * hw_out)
            .enumerate()
            .for_each(|(s, dst)| {
                let x = &self.data[s * ci * h * w..(s + 1) * ci * h * w];
                let cols = im2col(x, ci, h, w, kh, kw, oh, ow, geom);
                gemm(co, ckk, hw_out, &weight.data, false, &cols, false, dst, 0.0);
            });
        Tensor::new(vec![n, co, oh, ow], out)
    }

    /// Gradient of [`Tensor::conv2d`] with respect to its input, given the
    /// output gradient `self` (`[N, Co, Ho, Wo]`). Also serves as transposed
    /// convolution.
    pub fn conv2d_input_grad(&self, weight: &Tensor, in_h: usize, in_w: usize, geom: ConvGeom) -> Tensor {
        let (n, co, oh, ow) = dims4(self);
        let (wco, ci, kh, kw) = dims4(weight);
        assert_eq!(co, wco, "conv2d_input_grad channel mismatch");
        assert_eq!(geom.out_len(in_h, kh), Some(oh), "conv2d_input_grad height mismatch");
        assert_eq!(geom.out_len(in_w, kw), Some(ow), "conv2d_input_grad width mismatch");
        let ckk = ci * kh * kw;
        let hw_out = oh * ow;
        let mut out = vec![0.0; n * ci * in_h * in_w];
        out.par_chunks_mut(ci * in_h * in_w)
            .enumerate()
            .for_each(|(s, dst)| {
                let g = &self.data[s * co * hw_out..(s + 1) * co * hw_out];
                let mut cols = vec![0.0; ckk * hw_out];
                gemm(ckk, co, hw_out, &weight.data, true, g, false, &mut cols, 0.0);
                col2im(&cols, dst, ci, in_h, in_w, kh, kw, oh, ow, geom);
            });
        Tensor::new(vec![n, ci, in_h, in_w], out)
    }

    /// Gradient of [`Tensor::conv2d`] with respect to its weights, given the
    /// input `self` and output gradient `grad`.
    pub fn conv2d_weight_grad(&self, grad: &Tensor, kh: usize, kw: usize, geom: ConvGeom) -> Tensor {
        let (n, ci, h, w) = dims4(self);
        let (gn, co, oh, ow) = dims4(grad);
        assert_eq!(n, gn, "conv2d_weight_grad batch mismatch");
        assert_eq!(geom.out_len(h, kh), Some(oh), "conv2d_weight_grad height mismatch");
        assert_eq!(geom.out_len(w, kw), Some(ow), "conv2d_weight_grad width mismatch");
        let ckk = ci * kh * kw;
        let hw_out = oh * ow;
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let x = &self.data[s * ci * h * w..(s + 1) * ci * h * w];
                im2col(x, ci, h, w, kh, kw, oh, ow, geom)
            })
            .collect();
        let mut out = vec![0.0; co * ckk];
        // Sequential accumulation keeps the summation order fixed.
        for (s, col) in cols.iter().enumerate() {
            let g = &grad.data[s * co * hw_out..(s + 1) * co * hw_out];
            gemm_nt(co, hw_out, ckk, g, col, &mut out);
        }
        Tensor::new(vec![co, ci, kh, kw], out)
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    assert_eq!(t.ndim(), 4, "expected a 4-D tensor, got {:?}", t.shape());
    (t.shape[0], t.shape[1], t.shape[2], t.shape[3])
}

/// Maps a flat index of a full shape to the flat index of the shape that keeps
/// only the flagged axes.
struct AxisMap {
    dims: Vec<usize>,
    reduced_strides: Vec<usize>,
}

impl AxisMap {
    fn new(shape: &[usize], keep: &[bool]) -> Self {
        let mut reduced_strides = vec![0; shape.len()];
        let mut stride = 1;
        for axis in (0..shape.len()).rev() {
            if keep[axis] {
                reduced_strides[axis] = stride;
                stride *= shape[axis];
            }
        }
        AxisMap {
            dims: shape.to_vec(),
            reduced_strides,
        }
    }

    fn reduced_index(&self, mut flat: usize) -> usize {
        let mut out = 0;
        for axis in (0..self.dims.len()).rev() {
            let d = self.dims[axis];
            out += (flat % d) * self.reduced_strides[axis];
            flat /= d;
        }
        out
    }
}

/// `c = a·b + beta·c` for row-major `a: [m, k]` (or `[k, m]` when `ta`) and
/// `b: [k, n]` (or `[n, k]` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized m*k, k*n, m*n by construction at every call site
    // and the strides above address exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// `c += a · bᵀ` with `a: [m, k]`, `b: [n, k]`.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    gemm(m, k, n, a, false, b, true, c, 1.0);
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeom,
) -> Vec<f64> {
    let hw_out = oh * ow;
    let mut cols = vec![0.0; ci * kh * kw * hw_out];
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((c * kh + ki) * kw + kj) * hw_out..][..hw_out];
                for orow in 0..oh {
                    let ir = (orow * geom.stride + ki) as isize - geom.pad as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    let src = &plane[ir as usize * w..(ir as usize + 1) * w];
                    for ocol in 0..ow {
                        let ic = (ocol * geom.stride + kj) as isize - geom.pad as isize;
                        if ic >= 0 && ic < w as isize {
                            row[orow * ow + ocol] = src[ic as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    dst: &mut [f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeom,
) {
    let hw_out = oh * ow;
    for c in 0..ci {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((c * kh + ki) * kw + kj) * hw_out..][..hw_out];
                for orow in 0..oh {
                    let ir = (orow * geom.stride + ki) as isize - geom.pad as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    let base = ir as usize * w;
                    for ocol in 0..ow {
                        let ic = (ocol * geom.stride + kj) as isize - geom.pad as isize;
                        if ic >= 0 && ic < w as isize {
                            plane[base + ic as usize] += row[orow * ow + ocol];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, g: ConvGeom) -> Tensor {
        let (n, ci, h, wd) = dims4(x);
        let (co, _, kh, kw) = dims4(w);
        let oh = g.out_len(h, kh).unwrap();
        let ow = g.out_len(wd, kw).unwrap();
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        for s in 0..n {
            for o in 0..co {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..ci {
                            for a in 0..kh {
                                for b in 0..kw {
                                    let ir = (r * g.stride + a) as isize - g.pad as isize;
                                    let ic = (c * g.stride + b) as isize - g.pad as isize;
                                    if ir >= 0 && ic >= 0 && (ir as usize) < h && (ic as usize) < wd {
                                        acc += x.data[((s * ci + i) * h + ir as usize) * wd + ic as usize]
                                            * w.data[((o * ci + i) * kh + a) * kw + b];
                                    }
                                }
                            }
                        }
                        out.data[((s * co + o) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n = numel(shape);
        Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 7919) % 23) as f64 * scale - 0.3).collect())
    }

    #[test]
    fn conv_matches_naive_loops() {
        let x = ramp(&[2, 3, 7, 6], 0.05);
        let w = ramp(&[4, 3, 3, 3], 0.02);
        for geom in [ConvGeom::new(1, 0), ConvGeom::new(2, 1), ConvGeom::new(1, 1)] {
            let fast = x.conv2d(&w, geom);
            let slow = naive_conv(&x, &w, geom);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn conv_kernels_are_adjoint() {
        // <conv(x, w), g> = <x, conv_ig(g, w)> = <w, conv_wg(x, g)>
        let x = ramp(&[2, 2, 8, 8], 0.03);
        let w = ramp(&[3, 2, 4, 4], 0.01);
        let geom = ConvGeom::new(2, 1);
        let y = x.conv2d(&w, geom);
        let g = ramp(y.shape(), 0.07);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let gx = g.conv2d_input_grad(&w, 8, 8, geom);
        let mid: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        let gw = x.conv2d_weight_grad(&g, 4, 4, geom);
        let rhs: f64 = w.data.iter().zip(&gw.data).map(|(a, b)| a * b).sum();
        assert!((lhs - mid).abs() < 1e-10);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn sum_and_broadcast_axes() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(t.sum_axes(&[true, false]).data(), &[6., 15.]);
        assert_eq!(t.sum_axes(&[false, true]).data(), &[5., 7., 9.]);
        assert_eq!(t.sum_axes(&[false, false]).data(), &[21.]);
        let b = Tensor::new(vec![3], vec![1., 2., 3.]).broadcast_axes(&[2, 3], &[false, true]);
        assert_eq!(b.data(), &[1., 2., 3., 1., 2., 3.]);
    }

    #[test]
    fn narrow_embed_concat() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let n = t.narrow(1, 1, 2);
        assert_eq!(n.data(), &[2., 3., 5., 6.]);
        assert_eq!(n.embed(1, 1, 3).data(), &[0., 2., 3., 0., 5., 6.]);
        let a = t.narrow(1, 0, 1);
        assert_eq!(Tensor::concat(&[&a, &n], 1), t);
    }

    #[test]
    fn padding_and_pooling_adjoints() {
        let x = ramp(&[1, 2, 3, 4], 0.1);
        let p = x.pad_replicate(2);
        assert_eq!(p.shape(), &[1, 2, 7, 8]);
        let g = ramp(p.shape(), 0.05);
        let lhs: f64 = p.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&g.pad_replicate_adjoint(2).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let u = x.upsample_nearest(2);
        let gu = ramp(u.shape(), 0.2);
        let lhs: f64 = u.data.iter().zip(&gu.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gu.sum_pool(2).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::new(vec![2, 1], vec![5., 6.]);
        assert_eq!(a.matmul(&b).data(), &[17., 39.]);
        assert_eq!(a.transpose2().data(), &[1., 3., 2., 4.]);
    }
}
