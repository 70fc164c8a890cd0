//! Binary checkpoint (`ISSPv1`): config, layer table, parameters with Adam
//! moments, masks and training-state scalars, followed by a CRC-32 of
//! everything before it. All numbers are little-endian.
//!
//! ```text
//! "ISSPv1"
//! u32 len, RunConfig as JSON
//! u32 layers; per layer: u32 name len, name, u8 kind (0 conv, 1 linear),
//!     u32 rank, u32 dims.., u8 has_bias
//! per layer: f32 w, b, adam_m, adam_v, adam_m_b, adam_v_b (bias parts if present)
//! per layer: u32 pruned_count, u32 indices (ascending), u8 frozen, f32 tau
//! u64 k, u64 adam_t, f64 lr, f64 beta1, f64 beta2, f64 eps, f64 eta,
//! u64 rng_state, u64 rng_counter
//! u32 crc32
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::RunConfig;
use crate::nn::{AdamState, LayerKind, Model, ParamTensor};
use crate::pruning::{LayerMask, MaskState, TrainState};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"ISSPv1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);

        let model = &self.state.model;
        let names = model.param_names();
        put_u32(&mut out, model.params.len());
        for (p, name) in model.params.iter().zip(&names) {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            out.push(if p.w.shape().len() == 4 { 0 } else { 1 });
            put_u32(&mut out, p.w.shape().len());
            for &d in p.w.shape() {
                put_u32(&mut out, d);
            }
            out.push(p.b.is_some() as u8);
        }
        for p in &model.params {
            put_f32s(&mut out, &p.w);
            if let Some(b) = &p.b {
                put_f32s(&mut out, b);
            }
            put_f32s(&mut out, &p.adam_m);
            put_f32s(&mut out, &p.adam_v);
            for t in [&p.adam_m_b, &p.adam_v_b].into_iter().flatten() {
                put_f32s(&mut out, t);
            }
        }
        for l in &self.state.masks.layers {
            put_u32(&mut out, l.pruned.len());
            for &i in &l.pruned {
                out.extend_from_slice(&i.to_le_bytes());
            }
            out.push(self.state.masks.frozen as u8);
            out.extend_from_slice(&l.tau.to_le_bytes());
        }
        let s = &self.state;
        for v in [s.k, s.adam.t] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [s.adam.lr, s.adam.beta1, s.adam.beta2, s.adam.eps, s.eta] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [s.rng.state(), s.rng.counter()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < MAGIC.len() + 4 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let json_len = r.u32()?;
        let json = r.take(json_len)?;
        let config: RunConfig =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;

        let n_layers = r.u32()?;
        let mut table = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let name_len = r.u32()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("layer name is not UTF-8".into()))?;
            let kind = r.u8()?;
            let rank = r.u32()?;
            if rank > 8 {
                return Err(CheckpointError::Corrupt(format!("layer {name}: rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let has_bias = r.u8()? != 0;
            table.push((name, kind, dims, has_bias));
        }
        let mut params = Vec::with_capacity(n_layers);
        for (_, _, dims, has_bias) in &table {
            let w = r.tensor(dims)?;
            let b = if *has_bias { Some(r.tensor(&dims[..1])?) } else { None };
            let mut p = ParamTensor::new(w, b);
            p.adam_m = r.tensor(dims)?;
            p.adam_v = r.tensor(dims)?;
            if *has_bias {
                p.adam_m_b = Some(r.tensor(&dims[..1])?);
                p.adam_v_b = Some(r.tensor(&dims[..1])?);
            }
            params.push(p);
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut frozen = None;
        for p in &params {
            let count = r.u32()?;
            let pruned = (0..count).map(|_| r.u32().map(|v| v as u32)).collect::<Result<Vec<_>>>()?;
            let f = r.u8()? != 0;
            if frozen.is_some_and(|g| g != f) {
                return Err(CheckpointError::Corrupt("layers disagree on the frozen flag".into()));
            }
            frozen = Some(f);
            let tau = f32::from_le_bytes(r.array()?);
            layers.push(LayerMask { n: p.w.len(), pruned, tau });
        }
        let k = r.u64()?;
        let adam_t = r.u64()?;
        let [lr, beta1, beta2, eps, eta] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let rng = Rng::from_parts(r.u64()?, r.u64()?);
        if r.pos != body.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }

        let model = Model::from_params(config.model.clone(), params).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        for ((name, kind, ..), expect) in table.iter().zip(model.param_names()) {
            let layer = model.layers.iter().find(|l| l.name == expect).expect("named layer exists");
            let expect_kind = match layer.kind {
                LayerKind::Conv2d { .. } => 0,
                _ => 1,
            };
            if *name != expect || *kind != expect_kind {
                return Err(CheckpointError::Corrupt(format!("layer table entry {name} does not match {expect}")));
            }
        }
        let masks = MaskState {
            layers,
            frozen: frozen.unwrap_or(false),
        };
        masks
            .check_shapes(&model.params)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(Self {
            config,
            state: TrainState {
                k,
                model,
                masks,
                adam: AdamState { beta1, beta2, eps, t: adam_t, lr },
                rng,
                eta,
            },
        })
    }

    /// Atomic: written to a temporary file beside `path`, then renamed.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Write-temp-then-rename in the destination directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn tensor(&mut self, dims: &[usize]) -> Result<Tensor<f32>> {
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::from_vec(dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}
