//! Dense row-major tensors and the matmul / im2col kernels.
//!
//! Everything in the crate is built on [`Tensor`]: a shape plus a contiguous
//! buffer. There are no strided views; reshapes and transposes copy.

use std::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

pub use crate::gemm::{gemm, gemm_acc, gemm_acc_bt};

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Largest representable value strictly below `self`.
    fn next_below(self) -> Self;

    /// GEMM micro-kernel hook; see [`crate::gemm`].
    #[doc(hidden)]
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn gemm_tile(mr: usize, nr: usize, n: usize, a: &[Self], lda: usize, panel: &[Self], j: usize, c: &mut [Self], accumulate: bool) {
        crate::gemm::generic_tile(mr, nr, n, a, lda, panel, j, c, accumulate)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn next_below(self) -> Self {
        self.next_down()
    }
    #[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn gemm_tile(mr: usize, nr: usize, n: usize, a: &[Self], lda: usize, panel: &[Self], j: usize, c: &mut [Self], accumulate: bool) {
        crate::gemm::avx512_tile(mr, nr, n, a, lda, panel, j, c, accumulate)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn next_below(self) -> Self {
        self.next_down()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    #[error("bad range: lo {lo} >= hi {hi}")]
    BadRange { lo: f64, hi: f64 },
    #[error("bad shape {shape:?} for {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != data.len() {
            return Err(TensorError::BadShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; for internal construction with known dims.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); n]).expect("zeros: invalid shape")
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(v);
        t
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != self.data.len() {
            return Err(TensorError::BadShape {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::DimensionMismatch(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        transpose_into(&self.data, r, c, &mut out);
        Self::from_vec(&[c, r], out)
    }
}

/// Pool of reusable buffers. Large per-step allocations (im2col matrices,
/// activations) come from here so that a training loop does not fault fresh
/// pages in on every iteration.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    pool: Vec<Vec<T>>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Self { pool: Vec::new() }
    }

    /// A buffer of length `n` with unspecified contents.
    pub fn take(&mut self, n: usize) -> Vec<T> {
        let best = self
            .pool
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= n)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i)
            .or_else(|| (0..self.pool.len()).max_by_key(|&i| self.pool[i].capacity()));
        let mut v = match best {
            Some(i) => self.pool.swap_remove(i),
            None => Vec::new(),
        };
        v.resize(n, T::zero());
        v.truncate(n);
        v
    }

    pub fn take_zeroed(&mut self, n: usize) -> Vec<T> {
        let mut v = self.take(n);
        v.fill(T::zero());
        v
    }

    pub fn give(&mut self, v: Vec<T>) {
        if v.capacity() > 0 {
            self.pool.push(v);
        }
    }
}

/// `out` (cols x rows) = transpose of `src` (rows x cols).
pub fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, out: &mut [T]) {
    const B: usize = 32;
    for i0 in (0..rows).step_by(B) {
        for j0 in (0..cols).step_by(B) {
            for i in i0..(i0 + B).min(rows) {
                for j in j0..(j0 + B).min(cols) {
                    out[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

/// `c = a · b` for `a: m×k` and `b: k×n`.
///
/// Each output element accumulates its `k` products in ascending `t` order
/// starting from zero with a fused multiply-add per step, so the result is
/// bit-identical to the textbook triple loop (written with `mul_add`)
/// regardless of blocking, vector width, or platform.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(TensorError::DimensionMismatch(format!(
            "matmul {m}x{k} by {k2}x{n}"
        )));
    }
    let mut c = vec![T::zero(); m * n];
    gemm(m, k, n, &a.data, &b.data, &mut c);
    Tensor::from_vec(&[m, n], c)
}

/// Convolution geometry: kernel size, zero padding and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn square(k: usize, pad: usize) -> Self {
        Self {
            kh: k,
            kw: k,
            pad,
            stride: 1,
        }
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let one = |n: usize, k: usize| -> Option<usize> {
            if self.stride == 0 || k == 0 {
                return None;
            }
            let span = (n + 2 * self.pad).checked_sub(k)?;
            (span % self.stride == 0).then_some(span / self.stride + 1)
        };
        match (one(h, self.kh), one(w, self.kw)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(TensorError::BadGeometry(format!(
                "{h}x{w} input with {}x{} kernel, pad {}, stride {}",
                self.kh, self.kw, self.pad, self.stride
            ))),
        }
    }
}

/// Output columns `[lo, hi)` whose stride-1 read `ox + kj - pad` is in bounds.
#[inline]
fn valid_span(wo: usize, w: usize, kj: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj);
    let hi = (w + pad).saturating_sub(kj).min(wo);
    (lo, hi)
}

/// Unfold a `C×H×W` tensor into `(C·kh·kw) × (Ho·Wo)` columns.
pub fn im2col<T: Scalar>(x: &Tensor<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    let [c, h, w] = x.shape()[..] else {
        return Err(TensorError::ShapeMismatch(format!(
            "im2col expects C×H×W, got {:?}",
            x.shape()
        )));
    };
    let (ho, wo) = geom.output_size(h, w)?;
    let rows = c * geom.kh * geom.kw;
    let mut out = vec![T::zero(); rows * ho * wo];
    im2col_into(x.data(), c, h, w, geom, &mut out, ho * wo, 0);
    Tensor::from_vec(&[rows, ho * wo], out)
}

/// Write the columns of one sample into a wider matrix with leading
/// dimension `ld`, starting at column `col0`. Geometry must already be valid.
#[allow(clippy::too_many_arguments)]
pub fn im2col_into<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    geom: ConvGeometry,
    out: &mut [T],
    ld: usize,
    col0: usize,
) {
    let (ho, wo) = geom.output_size(h, w).expect("geometry checked by caller");
    if geom.stride == 1 {
        im2col_stride1(x, c, h, w, geom, (ho, wo), out, ld, col0);
        return;
    }
    let pad = geom.pad as isize;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ci * geom.kh + ki) * geom.kw + kj;
                let dst = &mut out[row * ld + col0..row * ld + col0 + ho * wo];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ki) as isize - pad;
                    let seg = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if geom.stride == 1 {
                        // plain loops: rows are short, and slice copies
                        // of dynamic length turn into memcpy calls
                        let (lo, hi) = valid_span(wo, w, kj, geom.pad);
                        let hi = hi.max(lo);
                        for v in &mut seg[..lo] {
                            *v = T::zero();
                        }
                        for v in &mut seg[hi..] {
                            *v = T::zero();
                        }
                        for (v, &x) in seg[lo..hi].iter_mut().zip(&src[(lo + kj).saturating_sub(geom.pad)..]) {
                            *v = x;
                        }
                        continue;
                    }
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Stride-1 unfold through a zero-padded copy, so every output row is one
/// contiguous read.
#[allow(clippy::too_many_arguments)]
fn im2col_stride1<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    geom: ConvGeometry,
    (ho, wo): (usize, usize),
    out: &mut [T],
    ld: usize,
    col0: usize,
) {
    let p = geom.pad;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut padded = vec![T::zero(); c * hp * wp];
    for ci in 0..c {
        for y in 0..h {
            let d = (ci * hp + y + p) * wp + p;
            padded[d..d + w].copy_from_slice(&x[(ci * h + y) * w..(ci * h + y + 1) * w]);
        }
    }
    for ci in 0..c {
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ci * geom.kh + ki) * geom.kw + kj;
                let dst = &mut out[row * ld + col0..row * ld + col0 + ho * wo];
                for (oy, seg) in dst.chunks_exact_mut(wo).enumerate() {
                    let s = (ci * hp + oy + ki) * wp + kj;
                    copy_short(seg, &padded[s..s + wo]);
                }
            }
        }
    }
}

/// Copy in fixed 8-wide blocks; `copy_from_slice` on short runtime lengths
/// ends up as a libc call per row.
#[inline(always)]
fn copy_short<T: Copy>(dst: &mut [T], src: &[T]) {
    let mut d = dst.chunks_exact_mut(8);
    let mut s = src.chunks_exact(8);
    for (a, b) in (&mut d).zip(&mut s) {
        <&mut [T; 8]>::try_from(a).unwrap().clone_from(<&[T; 8]>::try_from(b).unwrap());
    }
    for (a, b) in d.into_remainder().iter_mut().zip(s.remainder()) {
        *a = *b;
    }
}

/// Adjoint of [`im2col_into`]: scatter-add columns back into `dx` (`C×H×W`).
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    geom: ConvGeometry,
    ld: usize,
    col0: usize,
    dx: &mut [T],
) {
    let (ho, wo) = geom.output_size(h, w).expect("geometry checked by caller");
    let pad = geom.pad as isize;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (ci * geom.kh + ki) * geom.kw + kj;
                let src = &cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    if geom.stride == 1 {
                        let (lo, hi) = valid_span(wo, w, kj, geom.pad);
                        if lo < hi {
                            let off = lo + kj - geom.pad;
                            let d = &mut dst[off..off + hi - lo];
                            let s = &src[oy * wo + lo..oy * wo + hi];
                            d.iter_mut().zip(s).for_each(|(a, &b)| *a = *a + b);
                        }
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
