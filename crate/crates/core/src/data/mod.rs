//! Image ingestion, synthetic textures, bicubic LR synthesis, augmentation
//! and patch sampling.

mod ppm;
mod resize;
mod sampling;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use ppm::{load_ppm, save_ppm};
pub use resize::{bicubic_resize, bicubic_resize_plane, ResizeFilter};
pub use sampling::{
    augment, augment_chw, load_manifest, sample_patches, split_by_id, stack_pairs, PatchSampler, Provenance, SamplePair,
};
pub use synth::synth_texture;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a binary PPM (P6) file")]
    BadMagic,
    #[error("unsupported maxval {0}; only 255 is accepted")]
    BadMaxval(u32),
    #[error("truncated or malformed PPM data")]
    Truncated,
    #[error("image {h}×{w} is smaller than the required {min}×{min}")]
    TooSmall { h: usize, w: usize, min: usize },
    #[error("augmentation needs square patches, got {h}×{w}")]
    NonSquare { h: usize, w: usize },
    #[error("image {id} ({h}×{w}) cannot hold a {need}×{need} crop")]
    ImageTooSmall { id: String, h: usize, w: usize, need: usize },
    #[error("dataset is empty: {0}")]
    Empty(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// 8-bit interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(DataError::ShapeMismatch(format!("{} bytes for a {h}×{w} RGB image", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(h * w * 3).collect();
        Self { h, w, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        assert!(y0 + h <= self.h && x0 + w <= self.w, "crop out of bounds");
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let row = (y * self.w + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Self { h, w, data }
    }

    /// CHW tensor in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.h * self.w;
        let mut out = vec![0.0f32; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Tensor::from_vec(&[3, self.h, self.w], out).expect("consistent image dims")
    }

    /// Inverse of [`ImageU8::to_tensor`]: rounds and clamps each value.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let &[3, h, w] = t.shape() else {
            return Err(DataError::ShapeMismatch(format!("expected 3×H×W, got {:?}", t.shape())));
        };
        let plane = h * w;
        let src = t.data();
        let mut data = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[i * 3 + c] = (src[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(Self { h, w, data })
    }
}
