//! Dense row-major `f64` tensors and the numeric kernels the autograd layer
//! is built from. Images are stored NCHW.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Panicking constructor for internal use where the length is known.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_vec(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..numel(shape)).map(|_| normal.sample(rng)).collect();
        Self::from_vec(shape.to_vec(), data)
    }

    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..numel(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Self::from_vec(shape.to_vec(), data)
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape,
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Tensor::from_vec(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice `[start, start+len)` along the leading axis.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Tensor {
        assert!(!self.shape.is_empty() && start + len <= self.shape[0]);
        let inner = numel(&self.shape[1..]);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::from_vec(
            shape,
            self.data[start * inner..(start + len) * inner].to_vec(),
        )
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::invalid(format!(
                    "stack shape mismatch: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_vec(shape, data))
    }

    /// Concatenate along the leading axis.
    pub fn concat_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate an empty list"))?;
        let mut data = Vec::new();
        let mut lead = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::invalid("concat shape mismatch"));
            }
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Tensor::from_vec(shape, data))
    }

    /// Mirror along the last (width) axis.
    pub fn flip_last(&self) -> Tensor {
        let w = *self.shape.last().expect("non-scalar");
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data.chunks(w) {
            out.extend(row.iter().rev());
        }
        Tensor::from_vec(self.shape.clone(), out)
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Checks numpy-style broadcast compatibility for same-rank shapes.
fn check_broadcast(small: &[usize], big: &[usize]) {
    assert_eq!(
        small.len(),
        big.len(),
        "broadcast requires equal rank: {:?} vs {:?}",
        small,
        big
    );
    for (s, b) in small.iter().zip(big) {
        assert!(
            *s == *b || *s == 1,
            "cannot broadcast {:?} to {:?}",
            small,
            big
        );
    }
}

/// Calls `f(big_index, small_index)` for every element of `big`, where the
/// small index follows broadcasting rules.
fn for_each_broadcast(small: &[usize], big: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = big.len();
    if nd == 0 {
        f(0, 0);
        return;
    }
    let small_strides: Vec<usize> = strides_of(small)
        .into_iter()
        .zip(small)
        .map(|(st, &d)| if d == 1 { 0 } else { st })
        .collect();
    let inner = big[nd - 1];
    let inner_stride = small_strides[nd - 1];
    let outer: usize = numel(&big[..nd - 1]);
    let mut counter = vec![0usize; nd - 1];
    let mut big_idx = 0;
    for _ in 0..outer {
        let base: usize = counter
            .iter()
            .zip(&small_strides)
            .map(|(c, s)| c * s)
            .sum();
        for j in 0..inner {
            f(big_idx, base + j * inner_stride);
            big_idx += 1;
        }
        for d in (0..nd - 1).rev() {
            counter[d] += 1;
            if counter[d] < big[d] {
                break;
            }
            counter[d] = 0;
        }
    }
}

pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Tensor {
    check_broadcast(x.shape(), shape);
    if x.shape() == shape {
        return x.clone();
    }
    let mut out = vec![0.0; numel(shape)];
    let src = x.data();
    for_each_broadcast(x.shape(), shape, |bi, si| out[bi] = src[si]);
    Tensor::from_vec(shape.to_vec(), out)
}

/// Adjoint of [`broadcast_to`]: sums `x` down to `shape`.
pub fn sum_to(x: &Tensor, shape: &[usize]) -> Tensor {
    check_broadcast(shape, x.shape());
    if x.shape() == shape {
        return x.clone();
    }
    let mut out = vec![0.0; numel(shape)];
    let src = x.data();
    for_each_broadcast(shape, x.shape(), |bi, si| out[si] += src[bi]);
    Tensor::from_vec(shape.to_vec(), out)
}

/// `c[m×n] (+)= a[m×k] · b[k×n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices whose extents cover the strided
    // matrices; `c` is dense row-major m×n.
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

/// Batched matrix product with optional transposition of either operand.
/// `a`: [B, M, K] (or [B, K, M] when `ta`), `b`: [B, K, N] (or [B, N, K]).
pub fn bmm(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    assert_eq!(a.ndim(), 3, "bmm expects rank-3 operands");
    assert_eq!(b.ndim(), 3, "bmm expects rank-3 operands");
    let (ba, a0, a1) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, b0, b1) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    assert_eq!(ba, bb, "bmm batch mismatch");
    let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
    let (kb, n) = if tb { (b1, b0) } else { (b0, b1) };
    assert_eq!(k, kb, "bmm inner dimension mismatch");
    let (rsa, csa) = if ta { (1, a1 as isize) } else { (a1 as isize, 1) };
    let (rsb, csb) = if tb { (1, b1 as isize) } else { (b1 as isize, 1) };
    let mut out = vec![0.0; ba * m * n];
    let (sa, sb) = (a0 * a1, b0 * b1);
    for i in 0..ba {
        gemm(
            m,
            k,
            n,
            &a.data()[i * sa..(i + 1) * sa],
            rsa,
            csa,
            &b.data()[i * sb..(i + 1) * sb],
            rsb,
            csb,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Tensor::from_vec(vec![ba, m, n], out)
}

/// Stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> usize {
        let padded = input + 2 * self.pad;
        assert!(
            padded >= kernel,
            "kernel {kernel} larger than padded input {padded}"
        );
        (padded - kernel) / self.stride + 1
    }
}

struct ConvDims {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.ci * self.kh * self.kw
    }
    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], d: &ConvDims, g: ConvGeom, cols: &mut [f64]) {
    let hw = d.hw_out();
    for c in 0..d.ci {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, out) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, g: ConvGeom, x: &mut [f64]) {
    let hw = d.hw_out();
    for c in 0..d.ci {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution (cross-correlation): x [N,Ci,H,W], w [Co,Ci,kh,kw] → [N,Co,Ho,Wo].
pub fn conv2d(x: &Tensor, w: &Tensor, g: ConvGeom) -> Tensor {
    assert_eq!(x.ndim(), 4, "conv2d input must be NCHW, got {:?}", x.shape());
    assert_eq!(w.ndim(), 4, "conv2d kernel must be rank 4");
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(ci, wci, "conv2d channel mismatch: input {ci}, kernel {wci}");
    let d = ConvDims {
        ci,
        h,
        w: wd,
        kh,
        kw,
        ho: g.out_size(h, kh),
        wo: g.out_size(wd, kw),
    };
    let (ckk, hw) = (d.ckk(), d.hw_out());
    let mut cols = vec![0.0; ckk * hw];
    let mut out = vec![0.0; n * co * hw];
    for b in 0..n {
        im2col(&x.data()[b * ci * h * wd..(b + 1) * ci * h * wd], &d, g, &mut cols);
        gemm(
            co,
            ckk,
            hw,
            w.data(),
            ckk as isize,
            1,
            &cols,
            hw as isize,
            1,
            0.0,
            &mut out[b * co * hw..(b + 1) * co * hw],
        );
    }
    Tensor::from_vec(vec![n, co, d.ho, d.wo], out)
}

/// Gradient of [`conv2d`] with respect to its input; also the transposed
/// convolution. gy [N,Co,Ho,Wo], w [Co,Ci,kh,kw] → [N,Ci,H,W].
pub fn conv2d_input_grad(gy: &Tensor, w: &Tensor, g: ConvGeom, hw_in: (usize, usize)) -> Tensor {
    assert_eq!(gy.ndim(), 4);
    let (n, co, ho, wo) = (gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]);
    let (wco, ci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(co, wco, "transposed conv channel mismatch: {co} vs {wco}");
    let (h, wd) = hw_in;
    assert_eq!(g.out_size(h, kh), ho, "inconsistent transposed conv height");
    assert_eq!(g.out_size(wd, kw), wo, "inconsistent transposed conv width");
    let d = ConvDims {
        ci,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
    };
    let (ckk, hw) = (d.ckk(), d.hw_out());
    let mut cols = vec![0.0; ckk * hw];
    let mut out = vec![0.0; n * ci * h * wd];
    for b in 0..n {
        // cols = wᵀ · gy_b
        gemm(
            ckk,
            co,
            hw,
            w.data(),
            1,
            ckk as isize,
            &gy.data()[b * co * hw..(b + 1) * co * hw],
            hw as isize,
            1,
            0.0,
            &mut cols,
        );
        col2im(&cols, &d, g, &mut out[b * ci * h * wd..(b + 1) * ci * h * wd]);
    }
    Tensor::from_vec(vec![n, ci, h, wd], out)
}

/// Gradient of [`conv2d`] with respect to its kernel.
/// x [N,Ci,H,W], gy [N,Co,Ho,Wo] → [Co,Ci,kh,kw].
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, g: ConvGeom, k_hw: (usize, usize)) -> Tensor {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (gn, co, ho, wo) = (gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]);
    assert_eq!(n, gn, "weight grad batch mismatch");
    let (kh, kw) = k_hw;
    assert_eq!(g.out_size(h, kh), ho);
    assert_eq!(g.out_size(wd, kw), wo);
    let d = ConvDims {
        ci,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
    };
    let (ckk, hw) = (d.ckk(), d.hw_out());
    let mut cols = vec![0.0; ckk * hw];
    let mut out = vec![0.0; co * ckk];
    for b in 0..n {
        im2col(&x.data()[b * ci * h * wd..(b + 1) * ci * h * wd], &d, g, &mut cols);
        // out += gy_b · colsᵀ
        gemm(
            co,
            hw,
            ckk,
            &gy.data()[b * co * hw..(b + 1) * co * hw],
            hw as isize,
            1,
            &cols,
            1,
            hw as isize,
            1.0,
            &mut out,
        );
    }
    Tensor::from_vec(vec![co, ci, kh, kw], out)
}

/// Max pooling over NCHW; returns pooled values and flat argmax indices
/// into the input buffer.
pub fn max_pool2d_indices(x: &Tensor, kernel: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    assert!(h >= kernel && w >= kernel, "pool kernel exceeds input");
    let ho = (h - kernel) / stride + 1;
    let wo = (w - kernel) / stride + 1;
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    (idx, vec![n, c, ho, wo])
}

pub fn gather(x: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
    let src = x.data();
    Tensor::from_vec(shape.to_vec(), idx.iter().map(|&i| src[i]).collect())
}

/// Adjoint of [`gather`].
pub fn scatter_add(g: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
    let mut out = vec![0.0; numel(shape)];
    for (&i, &v) in idx.iter().zip(g.data()) {
        out[i] += v;
    }
    Tensor::from_vec(shape.to_vec(), out)
}

/// Views `shape` as [outer, axis, inner] around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

pub fn concat(items: &[&Tensor], axis: usize) -> Tensor {
    let first = items[0];
    let total: usize = items.iter().map(|t| t.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for t in items {
            let (_, len, tin) = split_axis(t.shape(), axis);
            assert_eq!(tin, inner, "concat mismatch off the concatenation axis");
            out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    Tensor::from_vec(shape, out)
}

pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, alen, inner) = split_axis(x.shape(), axis);
    assert!(start + len <= alen, "narrow out of bounds");
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        let base = (o * alen + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::from_vec(shape, out)
}

/// Adjoint of [`narrow`]: embeds `x` at `start` in a zero tensor of length
/// `total` along `axis`.
pub fn pad_axis(x: &Tensor, axis: usize, start: usize, total: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    assert!(start + len <= total);
    let mut shape = x.shape().to_vec();
    shape[axis] = total;
    let mut out = vec![0.0; numel(&shape)];
    for o in 0..outer {
        let base = (o * total + start) * inner;
        out[base..base + len * inner].copy_from_slice(&x.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_vec(shape, out)
}
