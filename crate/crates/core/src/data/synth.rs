use super::{DataError, ImageU8, Result};
use crate::rng::Rng;

/// Lattice of random values interpolated with a smoothstep.
struct ValueNoise {
    cells: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, cells: usize) -> Self {
        let grid = (0..(cells + 1) * (cells + 1)).map(|_| rng.next_f64()).collect();
        Self { cells, grid }
    }

    /// `u`, `v` in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let fx = u * self.cells as f64;
        let fy = v * self.cells as f64;
        let x0 = (fx.floor() as usize).min(self.cells - 1);
        let y0 = (fy.floor() as usize).min(self.cells - 1);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - x0 as f64), smooth(fy - y0 as f64));
        let g = |y: usize, x: usize| self.grid[y * (self.cells + 1) + x];
        let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
        let bottom = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Deterministic texture: multi-octave value noise per channel, a colour
/// gradient, and a few hard-edged shapes and stripe patches.
pub fn synth_texture(rng: &mut Rng, h: usize, w: usize) -> Result<ImageU8> {
    if h < 16 || w < 16 {
        return Err(DataError::TooSmall { h, w, min: 16 });
    }
    const OCTAVES: usize = 4;
    let octaves: Vec<[ValueNoise; 3]> = (0..OCTAVES)
        .map(|o| {
            let cells = 2 << o;
            [0, 1, 2].map(|_| ValueNoise::new(rng, cells))
        })
        .collect();
    let base: [f64; 3] = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
    let tilt: [f64; 3] = [rng.next_f64() - 0.5, rng.next_f64() - 0.5, rng.next_f64() - 0.5];

    struct Shape {
        cy: f64,
        cx: f64,
        r: f64,
        disk: bool,
        color: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..3 + rng.below(4))
        .map(|_| Shape {
            cy: rng.next_f64(),
            cx: rng.next_f64(),
            r: 0.08 + 0.2 * rng.next_f64(),
            disk: rng.below(2) == 0,
            color: [rng.next_f64(), rng.next_f64(), rng.next_f64()],
        })
        .collect();
    let stripe_angle = rng.next_f64() * std::f64::consts::PI;
    let stripe_freq = 6.0 + 10.0 * rng.next_f64();
    let (sa, ca) = stripe_angle.sin_cos();

    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let v = y as f64 / (h - 1) as f64;
        for x in 0..w {
            let u = x as f64 / (w - 1) as f64;
            let mut px = [0.0; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let mut noise = 0.0;
                let mut amp = 0.5;
                for oct in &octaves {
                    noise += amp * (oct[c].at(u, v) - 0.5);
                    amp *= 0.5;
                }
                *p = 0.25 + 0.5 * base[c] + tilt[c] * (u - v) + noise;
            }
            for s in &shapes {
                let (dy, dx) = (v - s.cy, u - s.cx);
                let inside = if s.disk {
                    dy * dy + dx * dx < s.r * s.r
                } else {
                    dy.abs() < s.r && dx.abs() < s.r * 0.7
                };
                if inside {
                    px = s.color;
                }
            }
            if u > 0.55 && v > 0.55 {
                let phase = (ca * u + sa * v) * stripe_freq;
                let stripe = if phase.fract().abs() < 0.5 { 0.15 } else { -0.15 };
                px.iter_mut().for_each(|p| *p += stripe);
            }
            data.extend(px.map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    ImageU8::new(h, w, data)
}
