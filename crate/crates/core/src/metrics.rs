//! Y-channel PSNR/SSIM, mask-flip counts, gradient statistics and the
//! per-iteration metric log.

use std::io::{self, Write};

use thiserror::Error;

use crate::data::ImageU8;
use crate::tensor::{Scalar, Tensor};

pub use crate::pruning::sparsity_audit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("expected 3 channels, got {0}")]
    BadChannels(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("border crop {crop} leaves nothing of a {h}×{w} image")]
    CropTooLarge { crop: usize, h: usize, w: usize },
    #[error("image {h}×{w} is smaller than the {min}×{min} SSIM window")]
    TooSmall { h: usize, w: usize, min: usize },
    #[error("malformed metrics CSV: {0}")]
    Csv(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

const Y_WEIGHTS: [f64; 3] = [65.481, 128.553, 24.966];

/// Studio-swing luma in `[16, 235]` from 8-bit RGB.
pub fn rgb_to_y(img: &ImageU8) -> Tensor<f64> {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| luma(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0))
        .collect();
    Tensor::from_vec(&[img.h, img.w], data).expect("consistent image dims")
}

/// Same conversion for a `3×H×W` tensor in `[0, 1]`.
pub fn rgb_tensor_to_y<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<f64>> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(MetricsError::BadChannels(shape.first().copied().unwrap_or(0)));
    }
    let plane = shape[1] * shape[2];
    let d = t.data();
    let data = (0..plane)
        .map(|i| luma(d[i].as_f64(), d[plane + i].as_f64(), d[2 * plane + i].as_f64()))
        .collect();
    Ok(Tensor::from_vec(&shape[1..], data).expect("consistent dims"))
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    Y_WEIGHTS[0] * r + Y_WEIGHTS[1] * g + Y_WEIGHTS[2] * b + 16.0
}

fn dims(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<(usize, usize)> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(MetricsError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((a.shape()[0], a.shape()[1]))
}

/// PSNR in dB over the image with `crop` pixels removed on each side.
/// Identical inputs give `f64::INFINITY`, returned directly rather than
/// through a division by zero.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64, crop: usize) -> Result<f64> {
    let (h, w) = dims(a, b)?;
    if 2 * crop >= h || 2 * crop >= w {
        return Err(MetricsError::CropTooLarge { crop, h, w });
    }
    let (da, db) = (a.data(), b.data());
    let mut sum = 0.0;
    for y in crop..h - crop {
        for x in crop..w - crop {
            let d = da[y * w + x] - db[y * w + x];
            sum += d * d;
        }
    }
    if sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sum / ((h - 2 * crop) * (w - 2 * crop)) as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable "valid" filtering with the normalized Gaussian window.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|t| g[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every fully contained 11×11 Gaussian window, for
/// inputs on a `[0, 255]` scale.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (h, w) = dims(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall { h, w, min: SSIM_WINDOW });
    }
    let g = gaussian_window();
    let (da, db) = (a.data(), b.data());
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(da, h, w, &g);
    let mu_b = filter_valid(db, h, w, &g);
    let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Permille of positions whose pruned/kept designation changed.
/// `true` marks a pruned position.
pub fn flip_permille(prev: &[bool], curr: &[bool]) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} positions", prev.len(), curr.len())));
    }
    if prev.is_empty() {
        return Ok(0.0);
    }
    let changed = prev.iter().zip(curr).filter(|(a, b)| a != b).count();
    Ok(1000.0 * changed as f64 / prev.len() as f64)
}

/// Gradient summary of one layer, accumulated in `f64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradStats {
    pub l2: f64,
    /// Population variance.
    pub var: f64,
    pub mean: f64,
    pub n: usize,
}

pub fn grad_stats<T: Scalar>(grad: &[T]) -> GradStats {
    let n = grad.len();
    if n == 0 {
        return GradStats { l2: 0.0, var: 0.0, mean: 0.0, n };
    }
    let mut sum = 0.0;
    let mut sq = 0.0;
    for g in grad {
        let v = g.as_f64();
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let var = grad.iter().map(|g| (g.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
    GradStats { l2: sq.sqrt(), var, mean, n }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: String,
    pub flips_permille: f64,
    pub grad: GradStats,
    pub zero_fraction: f64,
}

/// One training iteration's log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub k: u64,
    pub loss: f64,
    pub lr: f64,
    pub layers: Vec<LayerStats>,
}

pub const CSV_HEADER: &str = "k,loss,lr,layer,flips_permille,grad_l2,grad_var,zero_fraction";

/// Nine significant digits, `%g` style; non-finite values print as
/// `inf`, `-inf` or `nan`.
pub fn fmt_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Receives one row per training iteration.
pub trait MetricSink {
    fn record(&mut self, row: &MetricRow) -> io::Result<()>;
}

/// Discards rows.
#[derive(Debug, Default)]
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: &MetricRow) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps rows in memory.
#[derive(Debug, Default)]
pub struct VecSink(pub Vec<MetricRow>);

impl MetricSink for VecSink {
    fn record(&mut self, row: &MetricRow) -> io::Result<()> {
        self.0.push(row.clone());
        Ok(())
    }
}

/// Writes the metric CSV, one line per (iteration, layer).
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricSink for CsvSink<W> {
    fn record(&mut self, row: &MetricRow) -> io::Result<()> {
        for l in &row.layers {
            writeln!(
                self.out,
                "{},{},{},{},{},{},{},{}",
                row.k,
                fmt_sig9(row.loss),
                fmt_sig9(row.lr),
                l.layer,
                fmt_sig9(l.flips_permille),
                fmt_sig9(l.grad.l2),
                fmt_sig9(l.grad.var),
                fmt_sig9(l.zero_fraction)
            )?;
        }
        Ok(())
    }
}

impl<A: MetricSink, B: MetricSink> MetricSink for (A, B) {
    fn record(&mut self, row: &MetricRow) -> io::Result<()> {
        self.0.record(row)?;
        self.1.record(row)
    }
}

/// One parsed CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub k: u64,
    pub loss: f64,
    pub lr: f64,
    pub layer: String,
    pub flips_permille: f64,
    pub grad_l2: f64,
    pub grad_var: f64,
    pub zero_fraction: f64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(MetricsError::Csv("missing or wrong header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || MetricsError::Csv(format!("line {}: {line:?}", i + 2));
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(CsvRecord {
                k: f[0].parse().map_err(|_| bad())?,
                loss: num(f[1])?,
                lr: num(f[2])?,
                layer: f[3].to_string(),
                flips_permille: num(f[4])?,
                grad_l2: num(f[5])?,
                grad_var: num(f[6])?,
                zero_fraction: num(f[7])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn plane(rng: &mut Rng, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[h, w], (0..h * w).map(|_| rng.next_f64() * 255.0).collect()).unwrap()
    }

    #[test]
    fn luma_endpoints() {
        let y = rgb_to_y(&ImageU8::filled(2, 2, [0, 0, 0]));
        assert!(y.data().iter().all(|v| (v - 16.0).abs() < 1e-6));
        let y = rgb_to_y(&ImageU8::filled(2, 2, [255, 255, 255]));
        assert!(y.data().iter().all(|v| (v - 235.0).abs() < 1e-6));
        let red = rgb_to_y(&ImageU8::filled(1, 1, [255, 0, 0])).data()[0];
        let green = rgb_to_y(&ImageU8::filled(1, 1, [0, 255, 0])).data()[0];
        assert!(green > red);
    }

    #[test]
    fn tensor_luma_matches_image_luma() {
        let img = crate::data::synth_texture(&mut Rng::new(3), 16, 16).unwrap();
        let a = rgb_to_y(&img);
        let b = rgb_tensor_to_y(&img.to_tensor().cast::<f64>()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-4);
        }
        assert_eq!(rgb_tensor_to_y(&Tensor::<f32>::zeros(&[1, 2, 2])), Err(MetricsError::BadChannels(1)));
    }

    #[test]
    fn psnr_hand_cases() {
        let mut rng = Rng::new(0);
        let a = plane(&mut rng, 8, 8);
        assert_eq!(psnr(&a, &a, 255.0, 0).unwrap(), f64::INFINITY);
        let zeros = Tensor::<f64>::zeros(&[8, 8]);
        let offset = Tensor::full(&[8, 8], 16.0);
        let p = psnr(&zeros, &offset, 255.0, 2).unwrap();
        assert!((p - 24.05).abs() < 0.01, "{p}");
        assert!((p - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-12);
        assert!(matches!(psnr(&a, &a, 255.0, 4), Err(MetricsError::CropTooLarge { .. })));
        assert!(matches!(psnr(&a, &zeros.reshape(&[4, 16]).unwrap(), 255.0, 0), Err(MetricsError::ShapeMismatch(_))));
    }

    #[test]
    fn psnr_symmetric_and_permutation_invariant() {
        let mut rng = Rng::new(1);
        let (a, b) = (plane(&mut rng, 6, 7), plane(&mut rng, 6, 7));
        assert_eq!(psnr(&a, &b, 255.0, 0).unwrap(), psnr(&b, &a, 255.0, 0).unwrap());
        let mut perm: Vec<usize> = (0..42).collect();
        rng.shuffle(&mut perm);
        let pa = Tensor::from_vec(&[6, 7], perm.iter().map(|&i| a.data()[i]).collect()).unwrap();
        let pb = Tensor::from_vec(&[6, 7], perm.iter().map(|&i| b.data()[i]).collect()).unwrap();
        let (x, y) = (psnr(&a, &b, 255.0, 0).unwrap(), psnr(&pa, &pb, 255.0, 0).unwrap());
        assert!((x - y).abs() < 1e-9);
    }

    // Per-window SSIM with an explicitly built 2-D Gaussian.
    fn ssim_reference(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let (h, w) = (a.shape()[0], a.shape()[1]);
        let mut win = [[0.0f64; 11]; 11];
        let mut total = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        let (c1, c2) = (6.5025, 58.5225);
        let mut acc = 0.0;
        let mut count = 0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = win[i][j] / total;
                        ma += g * a.at(&[y + i, x + j]);
                        mb += g * b.at(&[y + i, x + j]);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = win[i][j] / total;
                        let (da, db) = (a.at(&[y + i, x + j]) - ma, b.at(&[y + i, x + j]) - mb);
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_brute_force() {
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let (a, b) = (plane(&mut rng, 16, 16), plane(&mut rng, 16, 16));
            let (got, want) = (ssim(&a, &b).unwrap(), ssim_reference(&a, &b));
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            assert!((got - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_special_cases() {
        let mut rng = Rng::new(5);
        let a = plane(&mut rng, 12, 13);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let flat = Tensor::full(&[12, 12], 40.0);
        let bright = Tensor::full(&[12, 12], 200.0);
        let s = ssim(&flat, &bright).unwrap();
        assert!(s > 0.0 && s < 1.0, "{s}");
        let small = Tensor::<f64>::zeros(&[10, 20]);
        assert!(matches!(ssim(&small, &small), Err(MetricsError::TooSmall { .. })));
    }

    #[test]
    fn flip_cases() {
        let (k, p) = (false, true);
        assert_eq!(flip_permille(&[k, k, p, p], &[k, k, p, p]).unwrap(), 0.0);
        assert_eq!(flip_permille(&[k, k, p, p], &[k, p, k, p]).unwrap(), 500.0);
        assert_eq!(flip_permille(&[k, p], &[p, k]).unwrap(), 1000.0);
        assert!(flip_permille(&[k], &[k, p]).is_err());
    }

    #[test]
    fn grad_stat_cases() {
        let s = grad_stats(&[3.0f64, 4.0]);
        assert_eq!(s.l2, 5.0);
        assert_eq!(grad_stats(&[0.7f32; 9]).var, 0.0);
        let z = grad_stats(&[0.0f32; 4]);
        assert_eq!((z.l2, z.var), (0.0, 0.0));
        let mut rng = Rng::new(6);
        let g: Vec<f32> = (0..1000).map(|_| (rng.next_f64() - 0.3) as f32 * 1e-3).collect();
        let s = grad_stats(&g);
        let lhs = s.l2 * s.l2;
        let rhs = s.n as f64 * (s.var + s.mean * s.mean);
        assert!((lhs - rhs).abs() <= 1e-9 * lhs);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(0.000_2), "0.0002");
        assert_eq!(fmt_sig9(123.456_789_123), "123.456789");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(2.5e-12), "2.5e-12");
        assert_eq!(fmt_sig9(-6.0e10), "-6e10");
        assert_eq!(fmt_sig9(f64::INFINITY), "inf");
        for v in [1.234_567_891_234e-7, 98_765.432_1, -0.012_345_678_9] {
            let back: f64 = fmt_sig9(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_round_trip() {
        let row = MetricRow {
            k: 3,
            loss: 0.012,
            lr: 2e-4,
            layers: vec![LayerStats {
                layer: "head".into(),
                flips_permille: 1.5,
                grad: grad_stats(&[3.0f64, 4.0]),
                zero_fraction: 0.95,
            }],
        };
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        sink.record(&row).unwrap();
        let text = String::from_utf8(sink.into_inner()).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n3,0.012,0.0002,head,1.5,5,0.25,0.95\n"));
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed[0].grad_l2, 5.0);
        assert_eq!(parsed[0].layer, "head");
    }
}
