use serde::{Deserialize, Serialize};

use super::ImageU8;

/// Bicubic variant used for resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeFilter {
    /// Kernel support widened by the downscale factor.
    #[default]
    Antialias,
    /// Fixed 4-tap kernel regardless of scale.
    Plain,
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output position: first source index (unclamped) and normalized taps.
struct Taps {
    start: Vec<isize>,
    weights: Vec<Vec<f64>>,
}

fn taps(in_len: usize, out_len: usize, filter: ResizeFilter) -> Taps {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if filter == ResizeFilter::Antialias && scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    let mut start = Vec::with_capacity(out_len);
    let mut weights = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = (i as f64 + 0.5) / scale - 0.5;
        let lo = (center - support).floor() as isize;
        let hi = (center + support).ceil() as isize;
        let mut w: Vec<f64> = (lo..=hi).map(|j| cubic((center - j as f64) * stretch)).collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= sum);
        start.push(lo);
        weights.push(w);
    }
    Taps { start, weights }
}

fn clamp_index(j: isize, len: usize) -> usize {
    j.clamp(0, len as isize - 1) as usize
}

/// Resize one row-major plane in `f64` without rounding: a horizontal pass
/// followed by a vertical pass, with edge clamping.
pub fn bicubic_resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize, filter: ResizeFilter) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "plane size");
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "resize dims must be positive");
    let tx = taps(w, out_w, filter);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..out_w {
            rows[y * out_w + x] = tx.weights[x]
                .iter()
                .enumerate()
                .map(|(t, &c)| c * line[clamp_index(tx.start[x] + t as isize, w)])
                .sum();
        }
    }
    let ty = taps(h, out_h, filter);
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for (t, &c) in ty.weights[y].iter().enumerate() {
            let sy = clamp_index(ty.start[y] + t as isize, h);
            let src_row = &rows[sy * out_w..(sy + 1) * out_w];
            for (o, &v) in out[y * out_w..(y + 1) * out_w].iter_mut().zip(src_row) {
                *o += c * v;
            }
        }
    }
    out
}

/// Bicubic resize of an RGB image; the result is rounded and clipped to
/// `[0, 255]`.
pub fn bicubic_resize(img: &ImageU8, out_h: usize, out_w: usize, filter: ResizeFilter) -> ImageU8 {
    let plane = img.h * img.w;
    let mut data = vec![0u8; out_h * out_w * 3];
    let mut chan = vec![0.0f64; plane];
    for c in 0..3 {
        for (i, v) in chan.iter_mut().enumerate() {
            *v = img.data[i * 3 + c] as f64;
        }
        let res = bicubic_resize_plane(&chan, img.h, img.w, out_h, out_w, filter);
        for (i, v) in res.into_iter().enumerate() {
            data[i * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    ImageU8 { h: out_h, w: out_w, data }
}
