use std::path::Path;

use super::resize::{bicubic_resize, ResizeFilter};
use super::{load_ppm, DataError, ImageU8, Result};
use crate::pruning::BatchSource;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Where a training pair came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub y: usize,
    pub x: usize,
    /// Augmentation code in `0..8`: rotation `code % 4` quarter turns
    /// counter-clockwise after a horizontal flip when `code >= 4`.
    pub aug: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub provenance: Provenance,
}

/// Apply augmentation `code` to a square `C×S×S` tensor.
pub fn augment_chw(t: &Tensor<f32>, code: u8) -> Result<Tensor<f32>> {
    let &[c, h, w] = t.shape() else {
        return Err(DataError::ShapeMismatch(format!("expected C×H×W, got {:?}", t.shape())));
    };
    if h != w {
        return Err(DataError::NonSquare { h, w });
    }
    assert!(code < 8, "augmentation code {code} out of range");
    let n = h;
    let (flip, turns) = (code >= 4, code % 4);
    let src = t.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        let plane = &src[ch * n * n..(ch + 1) * n * n];
        let dst = &mut out[ch * n * n..(ch + 1) * n * n];
        for y in 0..n {
            for x in 0..n {
                // destination (y, x) pulls from the source position that the
                // forward transform sends there
                let (mut sy, mut sx) = (y, x);
                for _ in 0..turns {
                    // inverse of a counter-clockwise quarter turn
                    (sy, sx) = (sx, n - 1 - sy);
                }
                if flip {
                    sx = n - 1 - sx;
                }
                dst[y * n + x] = plane[sy * n + sx];
            }
        }
    }
    Ok(Tensor::from_vec(&[c, n, n], out)?)
}

/// Uniformly one of the eight rotation/flip variants, applied identically to
/// both sides of the pair.
pub fn augment(pair: &SamplePair, rng: &mut Rng) -> Result<SamplePair> {
    let code = rng.below(8) as u8;
    Ok(SamplePair {
        lr: augment_chw(&pair.lr, code)?,
        hr: augment_chw(&pair.hr, code)?,
        provenance: Provenance {
            aug: code,
            ..pair.provenance.clone()
        },
    })
}

fn sample_one(
    images: &[(String, ImageU8)],
    scale: usize,
    p: usize,
    filter: ResizeFilter,
    with_aug: bool,
    rng: &mut Rng,
) -> Result<SamplePair> {
    let need = scale * p;
    let (id, img) = &images[rng.below(images.len() as u64) as usize];
    let y = rng.below((img.h - need + 1) as u64) as usize;
    let x = rng.below((img.w - need + 1) as u64) as usize;
    let hr = img.crop(y, x, need, need);
    let lr = bicubic_resize(&hr, p, p, filter);
    let pair = SamplePair {
        lr: lr.to_tensor(),
        hr: hr.to_tensor(),
        provenance: Provenance {
            source: id.clone(),
            y,
            x,
            aug: 0,
        },
    };
    if with_aug {
        augment(&pair, rng)
    } else {
        Ok(pair)
    }
}

fn check_sizes(images: &[(String, ImageU8)], scale: usize, p: usize) -> Result<()> {
    if images.is_empty() {
        return Err(DataError::Empty("no training images".into()));
    }
    let need = scale * p;
    for (id, img) in images {
        if img.h < need || img.w < need {
            return Err(DataError::ImageTooSmall {
                id: id.clone(),
                h: img.h,
                w: img.w,
                need,
            });
        }
    }
    Ok(())
}

/// `count` random crops with bicubic LR counterparts. Sample `i` draws from
/// its own stream derived from `rng`, so the result does not depend on the
/// order the samples are produced in.
pub fn sample_patches(
    images: &[(String, ImageU8)],
    scale: usize,
    p: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<SamplePair>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    check_sizes(images, scale, p)?;
    let base = rng.next_u64();
    (0..count)
        .map(|i| sample_one(images, scale, p, ResizeFilter::Antialias, true, &mut Rng::stream(base, i as u64)))
        .collect()
}

/// Stack pairs into `[B,3,p,p]` and `[B,3,sp,sp]` batches.
pub fn stack_pairs(pairs: &[SamplePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = pairs.first().ok_or_else(|| DataError::Empty("no pairs to stack".into()))?;
    let stack = |get: fn(&SamplePair) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let shape = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(pairs.len() * get(first).len());
        for p in pairs {
            if get(p).shape() != shape {
                return Err(DataError::ShapeMismatch(format!("{:?} vs {shape:?}", get(p).shape())));
            }
            data.extend_from_slice(get(p).data());
        }
        let mut full = vec![pairs.len()];
        full.extend(shape);
        Ok(Tensor::from_vec(&full, data)?)
    };
    Ok((stack(|p| &p.lr)?, stack(|p| &p.hr)?))
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Deterministic train/validation split by hashing each id with `seed`.
/// Returns the indices of each side.
pub fn split_by_id(ids: &[String], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let u = Rng::stream(seed, fnv1a(id)).next_f64();
        if u < val_fraction {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Reads a manifest of PPM paths, one per line. Blank lines and lines
/// starting with `#` are skipped; relative paths resolve against the
/// manifest's directory. Ids are the paths as written.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, ImageU8)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        out.push((line.to_string(), load_ppm(dir.join(line))?));
    }
    if out.is_empty() {
        return Err(DataError::Empty(format!("manifest {} lists no images", path.display())));
    }
    Ok(out)
}

/// Endless batch stream over a fixed image set. Iteration `k` uses samples
/// `(k-1)·batch .. k·batch`, each on its own stream keyed by the global
/// sample index.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    images: Vec<(String, ImageU8)>,
    scale: usize,
    patch: usize,
    batch: usize,
    seed: u64,
    filter: ResizeFilter,
    augment: bool,
}

impl PatchSampler {
    pub fn new(images: Vec<(String, ImageU8)>, scale: usize, patch: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || patch == 0 {
            return Err(DataError::ShapeMismatch("batch and patch must be positive".into()));
        }
        check_sizes(&images, scale, patch)?;
        Ok(Self {
            images,
            scale,
            patch,
            batch,
            seed,
            filter: ResizeFilter::Antialias,
            augment: true,
        })
    }

    pub fn with_filter(mut self, filter: ResizeFilter) -> Self {
        self.filter = filter;
        self
    }

    pub fn with_augment(mut self, on: bool) -> Self {
        self.augment = on;
        self
    }

    pub fn pairs(&self, k: u64) -> Result<Vec<SamplePair>> {
        let first = (k - 1) * self.batch as u64;
        (0..self.batch as u64)
            .map(|i| {
                let mut rng = Rng::stream(self.seed, first + i);
                sample_one(&self.images, self.scale, self.patch, self.filter, self.augment, &mut rng)
            })
            .collect()
    }
}

impl BatchSource for PatchSampler {
    fn batch(&mut self, k: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        stack_pairs(&self.pairs(k)?)
    }
}
