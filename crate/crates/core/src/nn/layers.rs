//! Forward and backward kernels for the backbone layers.
//!
//! The batched kernels take flat `[B, ...]` buffers; the tensor-level
//! wrappers at the bottom handle a single sample and validate shapes.

use crate::tensor::{col2im_add, gemm, gemm_acc, gemm_acc_bt, im2col_into, transpose_into, ConvGeometry, Scalar, Tensor, Workspace};

use super::{NnError, ParamTensor, Result};

/// Batched convolution forward. `x` is `B×Ci×H×W`, `w` is `Co×(Ci·kh·kw)`.
/// Returns the `B×Co×Ho×Wo` output, drawn from `ws`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward_batch<T: Scalar>(
    x: &[T],
    batch: usize,
    dims: (usize, usize, usize),
    weight: &[T],
    bias: Option<&[T]>,
    co: usize,
    geom: ConvGeometry,
    ws: &mut Workspace<T>,
) -> Result<Vec<T>> {
    let (out, cols) = conv2d_forward_keep(x, batch, dims, weight, bias, co, geom, false, ws)?;
    ws.give(cols);
    Ok(out)
}

/// [`conv2d_forward_batch`] that can also return every sample's im2col
/// matrix (`B×K×L`) for reuse by [`conv2d_backward_batch`]. Without `keep`
/// the second buffer holds only the last sample.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward_keep<T: Scalar>(
    x: &[T],
    batch: usize,
    (ci, h, w): (usize, usize, usize),
    weight: &[T],
    bias: Option<&[T]>,
    co: usize,
    geom: ConvGeometry,
    keep: bool,
    ws: &mut Workspace<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (ho, wo) = geom.output_size(h, w)?;
    let (k, l) = (ci * geom.kh * geom.kw, ho * wo);
    debug_assert_eq!(weight.len(), co * k);
    let mut out = ws.take(batch * co * l);
    let mut cols = ws.take(if keep { batch * k * l } else { k * l });
    for b in 0..batch {
        let cb = if keep { &mut cols[b * k * l..(b + 1) * k * l] } else { &mut cols[..] };
        im2col_into(&x[b * ci * h * w..(b + 1) * ci * h * w], ci, h, w, geom, cb, l, 0);
        let ob = &mut out[b * co * l..(b + 1) * co * l];
        gemm(co, k, l, weight, cb, ob);
        if let Some(bias) = bias {
            for (row, &bv) in ob.chunks_exact_mut(l).zip(bias) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Ok((out, cols))
}

/// Batched convolution backward. Uses the forward im2col matrices when
/// `saved_cols` is given and rebuilds them from `x` otherwise; accumulates into `grad_w` / `grad_b` in ascending sample
/// order and returns `grad_x` when `need_grad_x`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_batch<T: Scalar>(
    x: &[T],
    grad_y: &[T],
    batch: usize,
    (ci, h, w): (usize, usize, usize),
    weight: &[T],
    co: usize,
    geom: ConvGeometry,
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
    need_grad_x: bool,
    saved_cols: Option<&[T]>,
    ws: &mut Workspace<T>,
) -> Result<Option<Vec<T>>> {
    let (ho, wo) = geom.output_size(h, w)?;
    let (k, l) = (ci * geom.kh * geom.kw, ho * wo);
    if let Some(sc) = saved_cols {
        assert_eq!(sc.len(), batch * k * l, "saved im2col size");
    }
    // accumulate grad_wᵀ = Σ cols·gyᵀ; same per-element chain as gy·colsᵀ
    let mut gw_t = ws.take(k * co);
    transpose_into(grad_w, co, k, &mut gw_t);
    let mut cols = ws.take(k * l);
    for b in 0..batch {
        let cb = match saved_cols {
            Some(sc) => &sc[b * k * l..(b + 1) * k * l],
            None => {
                im2col_into(&x[b * ci * h * w..(b + 1) * ci * h * w], ci, h, w, geom, &mut cols, l, 0);
                &cols[..]
            }
        };
        gemm_acc_bt(k, l, co, cb, &grad_y[b * co * l..(b + 1) * co * l], &mut gw_t);
    }
    transpose_into(&gw_t, k, co, grad_w);
    ws.give(gw_t);
    if let Some(gb) = grad_b {
        for b in 0..batch {
            let gy = &grad_y[b * co * l..(b + 1) * co * l];
            for (acc, row) in gb.iter_mut().zip(gy.chunks_exact(l)) {
                *acc = row.iter().fold(*acc, |s, &v| s + v);
            }
        }
    }
    if !need_grad_x {
        ws.give(cols);
        return Ok(None);
    }
    let mut w_t = ws.take(k * co);
    transpose_into(weight, co, k, &mut w_t);
    let mut grad_x = ws.take_zeroed(batch * ci * h * w);
    for b in 0..batch {
        gemm(k, co, l, &w_t, &grad_y[b * co * l..(b + 1) * co * l], &mut cols);
        col2im_add(&cols, ci, h, w, geom, l, 0, &mut grad_x[b * ci * h * w..(b + 1) * ci * h * w]);
    }
    ws.give(w_t);
    ws.give(cols);
    Ok(Some(grad_x))
}

/// `y = x · wᵀ + b` for `x: B×n_in`, `w: n_out×n_in`.
pub fn linear_forward_batch<T: Scalar>(
    x: &[T],
    batch: usize,
    n_in: usize,
    weight: &[T],
    bias: Option<&[T]>,
    n_out: usize,
    ws: &mut Workspace<T>,
) -> Vec<T> {
    let mut w_t = ws.take(n_in * n_out);
    transpose_into(weight, n_out, n_in, &mut w_t);
    let mut y = ws.take(batch * n_out);
    gemm(batch, n_in, n_out, x, &w_t, &mut y);
    ws.give(w_t);
    if let Some(bias) = bias {
        for row in y.chunks_exact_mut(n_out) {
            row.iter_mut().zip(bias).for_each(|(v, &bv)| *v = *v + bv);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward_batch<T: Scalar>(
    x: &[T],
    grad_y: &[T],
    batch: usize,
    n_in: usize,
    weight: &[T],
    n_out: usize,
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
    need_grad_x: bool,
    ws: &mut Workspace<T>,
) -> Option<Vec<T>> {
    let mut gy_t = ws.take(n_out * batch);
    transpose_into(grad_y, batch, n_out, &mut gy_t);
    gemm_acc(n_out, batch, n_in, &gy_t, x, grad_w);
    ws.give(gy_t);
    if let Some(gb) = grad_b {
        for row in grad_y.chunks_exact(n_out) {
            gb.iter_mut().zip(row).for_each(|(acc, &v)| *acc = *acc + v);
        }
    }
    need_grad_x.then(|| {
        let mut gx = ws.take(batch * n_in);
        gemm(batch, n_out, n_in, grad_y, weight, &mut gx);
        gx
    })
}

pub fn relu_forward_into<T: Scalar>(x: &[T], out: &mut [T]) {
    out.iter_mut().zip(x).for_each(|(o, &v)| *o = if v > T::zero() { v } else { T::zero() });
}

pub fn relu_backward_into<T: Scalar>(x: &[T], grad_y: &[T], out: &mut [T]) {
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(grad_y) {
        *o = if v > T::zero() { g } else { T::zero() };
    }
}

pub fn relu_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    relu_forward_into(x, &mut out);
    out
}

pub fn relu_backward<T: Scalar>(x: &[T], grad_y: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    relu_backward_into(x, grad_y, &mut out);
    out
}

/// Sub-pixel rearrangement of one or more `(C·s²)×H×W` samples into `C×sH×sW`:
/// `y[c][s·h+i][s·w+j] = x[c·s²+i·s+j][h][w]`.
pub fn pixel_shuffle_into<T: Scalar>(x: &[T], batch: usize, (cin, h, w): (usize, usize, usize), s: usize, y: &mut [T]) {
    let c = cin / (s * s);
    let (oh, ow) = (h * s, w * s);
    let per = cin * h * w;
    for b in 0..batch {
        let (xb, yb) = (&x[b * per..(b + 1) * per], &mut y[b * per..(b + 1) * per]);
        for cc in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let src = &xb[(cc * s * s + i * s + j) * h * w..][..h * w];
                    for hh in 0..h {
                        let dst_row = &mut yb[cc * oh * ow + (hh * s + i) * ow..][..ow];
                        for ww in 0..w {
                            dst_row[ww * s + j] = src[hh * w + ww];
                        }
                    }
                }
            }
        }
    }
}

/// Inverse permutation of [`pixel_shuffle_into`]; also its backward pass.
pub fn pixel_unshuffle_into<T: Scalar>(y: &[T], batch: usize, (cin, h, w): (usize, usize, usize), s: usize, x: &mut [T]) {
    let c = cin / (s * s);
    let (oh, ow) = (h * s, w * s);
    let per = cin * h * w;
    for b in 0..batch {
        let (xb, yb) = (&mut x[b * per..(b + 1) * per], &y[b * per..(b + 1) * per]);
        for cc in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let dst = &mut xb[(cc * s * s + i * s + j) * h * w..][..h * w];
                    for hh in 0..h {
                        let src_row = &yb[cc * oh * ow + (hh * s + i) * ow..][..ow];
                        for ww in 0..w {
                            dst[hh * w + ww] = src_row[ww * s + j];
                        }
                    }
                }
            }
        }
    }
}

/// Sum of squared differences divided by `N`, writing `2(pred − target)/N`
/// into `grad`.
pub fn mse_into<T: Scalar>(pred: &[T], target: &[T], grad: &mut [T]) -> T {
    let n = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut sum = T::zero();
    for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(target) {
        let d = p - t;
        sum = d.mul_add(d, sum);
        *g = two * d / n;
    }
    sum / n
}

/// Mean squared error over all elements and its gradient `2(pred − target)/N`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut grad = Tensor::zeros(pred.shape());
    let loss = mse_into(pred.data(), target.data(), grad.data_mut());
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Option<Tensor<T>>,
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, p: &ParamTensor<T>) -> Result<((usize, usize, usize), usize, ConvGeometry)> {
    let [ci, h, w] = x.shape()[..] else {
        return Err(NnError::ShapeMismatch(format!("conv2d input must be C×H×W, got {:?}", x.shape())));
    };
    let [co, wci, kh, kw] = p.w.shape()[..] else {
        return Err(NnError::ShapeMismatch(format!("conv2d weight must be Co×Ci×kh×kw, got {:?}", p.w.shape())));
    };
    if wci != ci {
        return Err(NnError::ShapeMismatch(format!("conv2d input has {ci} channels, weight expects {wci}")));
    }
    Ok(((ci, h, w), co, ConvGeometry { kh, kw, pad: 0, stride: 1 }))
}

/// Single-sample convolution `y = conv(x, w) + b`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ParamTensor<T>, pad: usize, stride: usize) -> Result<Tensor<T>> {
    let (dims, co, mut geom) = conv_dims(x, p)?;
    geom.pad = pad;
    geom.stride = stride;
    let (ho, wo) = geom.output_size(dims.1, dims.2)?;
    let y = conv2d_forward_batch(x.data(), 1, dims, p.w.data(), p.b.as_ref().map(|b| b.data()), co, geom, &mut Workspace::new())?;
    Ok(Tensor::from_vec(&[co, ho, wo], y)?)
}

/// Gradients of a scalar objective through [`conv2d`] given `dL/dy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ParamTensor<T>,
    pad: usize,
    stride: usize,
    grad_y: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (dims, co, mut geom) = conv_dims(x, p)?;
    geom.pad = pad;
    geom.stride = stride;
    let (ho, wo) = geom.output_size(dims.1, dims.2)?;
    if grad_y.shape() != [co, ho, wo] {
        return Err(NnError::ShapeMismatch(format!("conv2d upstream gradient {:?}", grad_y.shape())));
    }
    let mut gw = vec![T::zero(); p.w.len()];
    let mut gb = p.b.as_ref().map(|b| vec![T::zero(); b.len()]);
    let gx = conv2d_backward_batch(x.data(), grad_y.data(), 1, dims, p.w.data(), co, geom, &mut gw, gb.as_deref_mut(), true, None, &mut Workspace::new())?
        .expect("grad_x requested");
    Ok(ConvGrads {
        grad_x: Tensor::from_vec(x.shape(), gx)?,
        grad_w: Tensor::from_vec(p.w.shape(), gw)?,
        grad_b: gb.map(|g| Tensor::from_vec(&[co], g)).transpose()?,
    })
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, p: &ParamTensor<T>) -> Result<(usize, usize)> {
    let (n_out, n_in) = p.w.dims2()?;
    if x.len() != n_in {
        return Err(NnError::ShapeMismatch(format!("linear input has {} elements, weight expects {n_in}", x.len())));
    }
    Ok((n_in, n_out))
}

/// Single-sample `y = w·x + b`.
pub fn linear<T: Scalar>(x: &Tensor<T>, p: &ParamTensor<T>) -> Result<Tensor<T>> {
    let (n_in, n_out) = linear_dims(x, p)?;
    let y = linear_forward_batch(x.data(), 1, n_in, p.w.data(), p.b.as_ref().map(|b| b.data()), n_out, &mut Workspace::new());
    Ok(Tensor::from_vec(&[n_out], y)?)
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, p: &ParamTensor<T>, grad_y: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (n_in, n_out) = linear_dims(x, p)?;
    if grad_y.len() != n_out {
        return Err(NnError::ShapeMismatch(format!("linear upstream gradient {:?}", grad_y.shape())));
    }
    let mut gw = vec![T::zero(); p.w.len()];
    let mut gb = p.b.as_ref().map(|b| vec![T::zero(); b.len()]);
    let gx = linear_backward_batch(x.data(), grad_y.data(), 1, n_in, p.w.data(), n_out, &mut gw, gb.as_deref_mut(), true, &mut Workspace::new())
        .expect("grad_x requested");
    Ok(ConvGrads {
        grad_x: Tensor::from_vec(x.shape(), gx)?,
        grad_w: Tensor::from_vec(p.w.shape(), gw)?,
        grad_b: gb.map(|g| Tensor::from_vec(&[n_out], g)).transpose()?,
    })
}

pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [c, h, w] = x.shape()[..] else {
        return Err(NnError::ShapeMismatch(format!("pixel_shuffle expects C×H×W, got {:?}", x.shape())));
    };
    if s == 0 || c % (s * s) != 0 {
        return Err(NnError::ShapeMismatch(format!("{c} channels not divisible by {s}²")));
    }
    let mut y = vec![T::zero(); x.len()];
    pixel_shuffle_into(x.data(), 1, (c, h, w), s, &mut y);
    Ok(Tensor::from_vec(&[c / (s * s), h * s, w * s], y)?)
}

pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [c, oh, ow] = y.shape()[..] else {
        return Err(NnError::ShapeMismatch(format!("pixel_unshuffle expects C×H×W, got {:?}", y.shape())));
    };
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(NnError::ShapeMismatch(format!("{oh}×{ow} not divisible by {s}")));
    }
    let (h, w) = (oh / s, ow / s);
    let mut x = vec![T::zero(); y.len()];
    pixel_unshuffle_into(y.data(), 1, (c * s * s, h, w), s, &mut x);
    Ok(Tensor::from_vec(&[c * s * s, h, w], x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn param(w: Tensor<f64>, b: Option<Tensor<f64>>) -> ParamTensor<f64> {
        ParamTensor::new(w, b)
    }

    fn rand(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        rng.uniform(-1.0, 1.0, n).unwrap().reshape(shape).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    // Central differences of the scalar L = <f(x), r> with respect to one entry.
    fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_all_ones_hand_values() {
        let x = Tensor::full(&[1, 3, 3], 1.0f64);
        let p = param(Tensor::full(&[1, 1, 3, 3], 1.0), Some(Tensor::zeros(&[1])));
        let y = conv2d(&x, &p, 1, 1).unwrap();
        assert_eq!(y.at(&[0, 1, 1]), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(&[0, r, c]), 4.0);
        }
        assert_eq!(y.at(&[0, 0, 1]), 6.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Rng::new(2);
        let x = rand(&mut rng, &[2, 4, 5]);
        let mut w = Tensor::zeros(&[2, 2, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let y = conv2d(&x, &param(w, None), 0, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[3, 4, 4]);
        let p = param(Tensor::zeros(&[1, 2, 3, 3]), None);
        assert!(matches!(conv2d(&x, &p, 1, 1), Err(NnError::ShapeMismatch(_))));
        let p = param(Tensor::zeros(&[1, 3, 3, 3]), None);
        assert!(matches!(conv2d(&x, &p, 0, 2), Err(NnError::Tensor(_))));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        for &(pad, stride) in &[(1usize, 1usize), (0, 1), (1, 2)] {
            let x = rand(&mut rng, &[2, 5, 5]);
            let p = param(rand(&mut rng, &[3, 2, 3, 3]), Some(rand(&mut rng, &[3])));
            let y = conv2d(&x, &p, pad, stride).unwrap();
            let r = rand(&mut rng, y.shape());
            let g = conv2d_backward(&x, &p, pad, stride, &r).unwrap();

            let fx = |xv: &[f64]| dot(&conv2d(&Tensor::from_vec(x.shape(), xv.to_vec()).unwrap(), &p, pad, stride).unwrap(), &r);
            let num: Vec<f64> = (0..x.len()).map(|i| fd(&fx, x.data(), i, 1e-5)).collect();
            assert!(max_rel_err(g.grad_x.data(), &num) < 1e-4);

            let fw = |wv: &[f64]| {
                let q = param(Tensor::from_vec(p.w.shape(), wv.to_vec()).unwrap(), p.b.clone());
                dot(&conv2d(&x, &q, pad, stride).unwrap(), &r)
            };
            let num: Vec<f64> = (0..p.w.len()).map(|i| fd(&fw, p.w.data(), i, 1e-5)).collect();
            assert!(max_rel_err(g.grad_w.data(), &num) < 1e-4);

            let fb = |bv: &[f64]| {
                let q = param(p.w.clone(), Some(Tensor::from_vec(&[3], bv.to_vec()).unwrap()));
                dot(&conv2d(&x, &q, pad, stride).unwrap(), &r)
            };
            let b = p.b.as_ref().unwrap();
            let num: Vec<f64> = (0..3).map(|i| fd(&fb, b.data(), i, 1e-5)).collect();
            assert!(max_rel_err(g.grad_b.unwrap().data(), &num) < 1e-4);
        }
    }

    #[test]
    fn linear_hand_and_identity() {
        let p = param(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), Some(Tensor::zeros(&[2])));
        let y = linear(&Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap(), &p).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
        let x = Tensor::from_vec(&[3], vec![0.5, -2.0, 7.0]).unwrap();
        assert_eq!(linear(&x, &param(Tensor::identity(3), None)).unwrap(), x);
        assert!(linear(&x, &p).is_err());
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = Rng::new(4);
        let x = rand(&mut rng, &[5]);
        let p = param(rand(&mut rng, &[3, 5]), Some(rand(&mut rng, &[3])));
        let r = rand(&mut rng, &[3]);
        let g = linear_backward(&x, &p, &r).unwrap();
        let fx = |xv: &[f64]| dot(&linear(&Tensor::from_vec(&[5], xv.to_vec()).unwrap(), &p).unwrap(), &r);
        let num: Vec<f64> = (0..5).map(|i| fd(&fx, x.data(), i, 1e-5)).collect();
        assert!(max_rel_err(g.grad_x.data(), &num) < 1e-4);
        let fw = |wv: &[f64]| {
            let q = param(Tensor::from_vec(&[3, 5], wv.to_vec()).unwrap(), p.b.clone());
            dot(&linear(&x, &q).unwrap(), &r)
        };
        let num: Vec<f64> = (0..15).map(|i| fd(&fw, p.w.data(), i, 1e-5)).collect();
        assert!(max_rel_err(g.grad_w.data(), &num) < 1e-4);
        assert_eq!(g.grad_b.unwrap().data(), r.data());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu_forward(&[-1.0f32, -0.5, -3.0]), vec![0.0; 3]);
        assert_eq!(relu_backward(&[-1.0f32, 2.0], &[5.0, 5.0]), vec![0.0, 5.0]);
        // finite differences away from the kink
        let x = [0.3f64, -0.7, 1.2, -0.01];
        let h = 1e-5;
        for i in 0..x.len() {
            let mut up = vec![0.0; 4];
            up[i] = 1.0;
            let analytic = relu_backward(&x, &up)[i];
            let num = (relu_forward(&[x[i] + h])[0] - relu_forward(&[x[i] - h])[0]) / (2.0 * h);
            assert!((analytic - num).abs() < 1e-4 * num.abs().max(1.0));
        }
    }

    #[test]
    fn pixel_shuffle_index_formula() {
        let x = Tensor::from_vec(&[4, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let mut rng = Rng::new(0);
        let x = rand(&mut rng, &[3, 2, 3]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert!(pixel_shuffle(&rand(&mut rng, &[3, 2, 2]), 2).is_err());
    }

    #[test]
    fn pixel_shuffle_general_layout() {
        let (c, s, h, w) = (2, 3, 2, 2);
        let mut rng = Rng::new(8);
        let x = rand(&mut rng, &[c * s * s, h, w]);
        let y = pixel_shuffle(&x, s).unwrap();
        for cc in 0..c {
            for i in 0..s {
                for j in 0..s {
                    for hh in 0..h {
                        for ww in 0..w {
                            assert_eq!(y.at(&[cc, s * hh + i, s * ww + j]), x.at(&[cc * s * s + i * s + j, hh, ww]));
                        }
                    }
                }
            }
        }
        assert_eq!(pixel_unshuffle(&y, s).unwrap(), x);
    }

    #[test]
    fn mse_cases() {
        let p = Tensor::from_vec(&[2], vec![1.0f64, 1.0]).unwrap();
        let t = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let (loss, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g.data(), &[1.0, 1.0]);
        let (loss, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(mse_loss(&p, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn mse_gradient_finite_differences() {
        let mut rng = Rng::new(12);
        let p = rand(&mut rng, &[2, 3, 3]);
        let t = rand(&mut rng, &[2, 3, 3]);
        let (_, g) = mse_loss(&p, &t).unwrap();
        let f = |pv: &[f64]| mse_loss(&Tensor::from_vec(p.shape(), pv.to_vec()).unwrap(), &t).unwrap().0;
        let num: Vec<f64> = (0..p.len()).map(|i| fd(&f, p.data(), i, 1e-5)).collect();
        assert!(max_rel_err(g.data(), &num) < 1e-6);
    }
}
