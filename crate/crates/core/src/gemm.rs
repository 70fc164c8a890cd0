//! Dense GEMM with a fixed per-element summation order.
//!
//! Every output element is one chain of fused multiply-adds over ascending
//! `t`. Blocking only changes which elements are computed together, never the
//! order within a chain, so any kernel here gives the same bits as the naive
//! triple loop written with `mul_add`.

use crate::tensor::Scalar;

pub(crate) const MR: usize = 8;
pub(crate) const NR: usize = 32;

/// `c = a · b` for row-major `a: m×k`, `b: k×n`; overwrites `c`.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    if k == 0 {
        c[..m * n].fill(T::zero());
        return;
    }
    assert!(b.len() >= k * n);
    run(m, k, n, a, c, false, |panel, j, nr| pack_rows(b, n, panel, j, nr));
}

/// `c += a · b`, continuing each element's ascending-`t` accumulation from
/// its current value. Calling this for consecutive row blocks of `b` gives
/// the same bits as one call over the stacked matrices.
pub fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(b.len() >= k * n);
    run(m, k, n, a, c, true, |panel, j, nr| pack_rows(b, n, panel, j, nr));
}

fn pack_rows<T: Scalar>(b: &[T], n: usize, panel: &mut [T], j: usize, nr: usize) {
    if nr == NR {
        for (t, dst) in panel.chunks_exact_mut(NR).enumerate() {
            let src: &[T; NR] = b[t * n + j..t * n + j + NR].try_into().unwrap();
            *<&mut [T; NR]>::try_from(dst).unwrap() = *src;
        }
    } else {
        for (t, dst) in panel.chunks_exact_mut(NR).enumerate() {
            dst[..nr].copy_from_slice(&b[t * n + j..t * n + j + nr]);
            dst[nr..].fill(T::zero());
        }
    }
}

/// `c += a · btᵀ` for `bt: n×k`, with the same accumulation contract as
/// [`gemm_acc`].
pub fn gemm_acc_bt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], bt: &[T], c: &mut [T]) {
    assert!(bt.len() >= k * n);
    run(m, k, n, a, c, true, |panel, j, nr| {
        panel.fill(T::zero());
        for q in 0..nr {
            let src = &bt[(j + q) * k..(j + q + 1) * k];
            for (t, &v) in src.iter().enumerate() {
                panel[t * NR + q] = v;
            }
        }
    });
}

/// Shared driver. With `accumulate` false the chains start from zero and
/// `c` is only written.
fn run<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    c: &mut [T],
    accumulate: bool,
    mut pack_b: impl FnMut(&mut [T], usize, usize)) {
    assert!(a.len() >= m * k && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // k×NR column panel of b, zero-padded on the right edge
    let mut panel = vec![T::zero(); k * NR];
    for j in (0..n).step_by(NR) {
        let nr = NR.min(n - j);
        pack_b(&mut panel, j, nr);
        for i in (0..m).step_by(MR) {
            T::gemm_tile(MR.min(m - i), nr, n, &a[i * k..], k, &panel, j, &mut c[i * n..], accumulate);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn generic_tile<T: Scalar>(mr: usize, nr: usize, n: usize, a: &[T], lda: usize, panel: &[T], j: usize, c: &mut [T], accumulate: bool) {
    match mr {
        8 => tile::<T, 8>(nr, n, a, lda, panel, j, c, accumulate),
        7 => tile::<T, 7>(nr, n, a, lda, panel, j, c, accumulate),
        6 => tile::<T, 6>(nr, n, a, lda, panel, j, c, accumulate),
        5 => tile::<T, 5>(nr, n, a, lda, panel, j, c, accumulate),
        4 => tile::<T, 4>(nr, n, a, lda, panel, j, c, accumulate),
        3 => tile::<T, 3>(nr, n, a, lda, panel, j, c, accumulate),
        2 => tile::<T, 2>(nr, n, a, lda, panel, j, c, accumulate),
        _ => tile::<T, 1>(nr, n, a, lda, panel, j, c, accumulate),
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile<T: Scalar, const R: usize>(nr: usize, n: usize, a: &[T], lda: usize, panel: &[T], j: usize, c: &mut [T], accumulate: bool) {
    let mut acc = [[T::zero(); NR]; R];
    if accumulate {
        for r in 0..R {
            acc[r][..nr].copy_from_slice(&c[r * n + j..r * n + j + nr]);
        }
    }
    for t in 0..panel.len() / NR {
        let bv: &[T; NR] = panel[t * NR..(t + 1) * NR].try_into().unwrap();
        for r in 0..R {
            let x = a[r * lda + t];
            for q in 0..NR {
                acc[r][q] = x.mul_add(bv[q], acc[r][q]);
            }
        }
    }
    for r in 0..R {
        c[r * n + j..r * n + j + nr].copy_from_slice(&acc[r][..nr]);
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
#[allow(clippy::too_many_arguments)]
pub(crate) fn avx512_tile(mr: usize, nr: usize, n: usize, a: &[f32], lda: usize, panel: &[f32], j: usize, c: &mut [f32], accumulate: bool) {
    match mr {
        8 => avx512::tile::<8>(nr, n, a, lda, panel, j, c, accumulate),
        7 => avx512::tile::<7>(nr, n, a, lda, panel, j, c, accumulate),
        6 => avx512::tile::<6>(nr, n, a, lda, panel, j, c, accumulate),
        5 => avx512::tile::<5>(nr, n, a, lda, panel, j, c, accumulate),
        4 => avx512::tile::<4>(nr, n, a, lda, panel, j, c, accumulate),
        3 => avx512::tile::<3>(nr, n, a, lda, panel, j, c, accumulate),
        2 => avx512::tile::<2>(nr, n, a, lda, panel, j, c, accumulate),
        _ => avx512::tile::<1>(nr, n, a, lda, panel, j, c, accumulate),
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod avx512 {
    use std::arch::x86_64::*;

    use super::NR;

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    pub(super) fn tile<const R: usize>(nr: usize, n: usize, a: &[f32], lda: usize, panel: &[f32], j: usize, c: &mut [f32], accumulate: bool) {
        const { assert!(NR == 32) };
        let k = panel.len() / NR;
        assert!((1..=NR).contains(&nr) && a.len() >= (R - 1) * lda + k && c.len() >= (R - 1) * n + j + nr);
        let lanes = |m: usize| -> __mmask16 { if m >= 16 { 0xffff } else { (1u16 << m) - 1 } };
        let (lo, hi) = (lanes(nr), lanes(nr.saturating_sub(16)));
        // SAFETY: the assert bounds every row access: `c` rows by `nr` valid
        // lanes (masked lanes are never touched), `a` rows by `k`, and
        // `panel` reads stay below `k·NR`.
        unsafe {
            let cp = c.as_mut_ptr();
            let mut acc = [[_mm512_setzero_ps(); 2]; R];
            if accumulate {
                for (r, v) in acc.iter_mut().enumerate() {
                    v[0] = _mm512_maskz_loadu_ps(lo, cp.add(r * n + j));
                    if hi != 0 {
                        v[1] = _mm512_maskz_loadu_ps(hi, cp.add(r * n + j + 16));
                    }
                }
            }
            let (ap, bp) = (a.as_ptr(), panel.as_ptr());
            if hi == 0 {
                for t in 0..k {
                    let b0 = _mm512_loadu_ps(bp.add(t * NR));
                    for (r, v) in acc.iter_mut().enumerate() {
                        v[0] = _mm512_fmadd_ps(_mm512_set1_ps(*ap.add(r * lda + t)), b0, v[0]);
                    }
                }
            } else {
                for t in 0..k {
                    let b0 = _mm512_loadu_ps(bp.add(t * NR));
                    let b1 = _mm512_loadu_ps(bp.add(t * NR + 16));
                    for (r, v) in acc.iter_mut().enumerate() {
                        let x = _mm512_set1_ps(*ap.add(r * lda + t));
                        v[0] = _mm512_fmadd_ps(x, b0, v[0]);
                        v[1] = _mm512_fmadd_ps(x, b1, v[1]);
                    }
                }
            }
            for (r, v) in acc.iter().enumerate() {
                _mm512_mask_storeu_ps(cp.add(r * n + j), lo, v[0]);
                if hi != 0 {
                    _mm512_mask_storeu_ps(cp.add(r * n + j + 16), hi, v[1]);
                }
            }
        }
    }
}
