//! Compressed-sparse-row export of a frozen model and the sparse forward
//! path built on it.
//!
//! A layer's CSR structure is its frozen mask: every kept position is
//! stored, including a kept weight that happens to be exactly zero, so the
//! stored count per layer is always `n - pruned`.
//!
//! Sparse model file (`ISSPs1`), little-endian:
//!
//! ```text
//! "ISSPs1"
//! u32 len, ModelConfig as JSON
//! u32 layers; per layer: u32 name len, name, u32 rows, u32 cols, u32 nnz, u8 has_bias
//! per layer: u32 row_ptr[rows + 1], u32 col_idx[nnz], f32 vals[nnz], f32 bias[rows]
//! u32 crc32
//! ```

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{write_atomic, Checkpoint, CheckpointError, Reader};
use crate::nn::layers::{pixel_shuffle_into, relu_forward_into};
use crate::nn::{out_shape, LayerKind, LayerSpec, Model, ModelConfig, NnError};
use crate::pruning::{pruned_count, LayerMask, MaskState, Method};
use crate::tensor::{gemm, im2col_into, ConvGeometry, Tensor, TensorError};

pub const MAGIC: &[u8; 6] = b"ISSPs1";

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("mask is not frozen")]
    NotFrozen,
    #[error("weight {index} of {layer} is pruned but nonzero")]
    MaskWeightDisagreement { layer: String, index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid CSR: {0}")]
    InvalidCsr(String),
    #[error("layer {layer}: {nnz} stored weights, expected {expected}")]
    NnzMismatch { layer: String, nnz: usize, expected: usize },
    #[error("sparse and dense outputs differ by {0:e}")]
    CorrectnessFailure(f64),
    #[error("benchmark needs at least 3 repetitions, got {0}")]
    TooFewReps(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    File(#[from] CheckpointError),
}

pub type Result<T, E = SparseError> = std::result::Result<T, E>;

/// Row-major CSR matrix with `u32` indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    vals: Vec<f32>,
}

impl CsrMatrix {
    /// Validates every structural invariant.
    pub fn new(rows: usize, cols: usize, row_ptr: Vec<u32>, col_idx: Vec<u32>, vals: Vec<f32>) -> Result<Self> {
        let bad = |m: String| Err(SparseError::InvalidCsr(m));
        if row_ptr.len() != rows + 1 {
            return bad(format!("row_ptr has {} entries for {rows} rows", row_ptr.len()));
        }
        if row_ptr[0] != 0 || row_ptr[rows] as usize != col_idx.len() || col_idx.len() != vals.len() {
            return bad(format!(
                "row_ptr ends {}..{} for {} indices and {} values",
                row_ptr[0],
                row_ptr[rows],
                col_idx.len(),
                vals.len()
            ));
        }
        for (i, w) in row_ptr.windows(2).enumerate() {
            if w[0] > w[1] {
                return bad(format!("row_ptr decreases at row {i}"));
            }
            let row = &col_idx[w[0] as usize..w[1] as usize];
            if row.windows(2).any(|p| p[0] >= p[1]) {
                return bad(format!("column indices of row {i} are not strictly increasing"));
            }
            if row.last().is_some_and(|&c| c as usize >= cols) {
                return bad(format!("column index out of range in row {i}"));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Stores the nonzero entries of a dense row-major matrix.
    pub fn from_dense(w: &[f32], rows: usize, cols: usize) -> Self {
        assert_eq!(w.len(), rows * cols, "dense size");
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let (mut col_idx, mut vals) = (Vec::new(), Vec::new());
        row_ptr.push(0);
        for row in w.chunks_exact(cols.max(1)).take(rows) {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len() as u32);
        }
        if cols == 0 {
            row_ptr.resize(rows + 1, 0);
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[u32] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn vals(&self) -> &[f32] {
        &self.vals
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let (lo, hi) = (self.row_ptr[i] as usize, self.row_ptr[i + 1] as usize);
            for (&j, &v) in self.col_idx[lo..hi].iter().zip(&self.vals[lo..hi]) {
                out[i * self.cols + j as usize] = v;
            }
        }
        out
    }

    /// `c = self · b` for row-major `b: cols × n`. Each output element is an
    /// FMA chain over ascending column index, which skips exactly the zero
    /// terms of the dense chain and so reproduces its bits.
    pub fn matmul_into(&self, b: &[f32], n: usize, c: &mut [f32]) {
        assert!(b.len() >= self.cols * n && c.len() >= self.rows * n);
        for i in 0..self.rows {
            let out = &mut c[i * n..(i + 1) * n];
            out.fill(0.0);
            let (lo, hi) = (self.row_ptr[i] as usize, self.row_ptr[i + 1] as usize);
            for (&j, &v) in self.col_idx[lo..hi].iter().zip(&self.vals[lo..hi]) {
                let src = &b[j as usize * n..(j as usize + 1) * n];
                for (o, &x) in out.iter_mut().zip(src) {
                    *o = v.mul_add(x, *o);
                }
            }
        }
    }
}

/// CSR of a weight tensor (`Co × rest`) at the kept positions of a frozen
/// mask.
pub fn to_csr(w: &Tensor<f32>, mask: &LayerMask, frozen: bool) -> Result<CsrMatrix> {
    to_csr_named(w, mask, frozen, "weight")
}

fn to_csr_named(w: &Tensor<f32>, mask: &LayerMask, frozen: bool, layer: &str) -> Result<CsrMatrix> {
    if !frozen {
        return Err(SparseError::NotFrozen);
    }
    if mask.n != w.len() || w.shape().is_empty() {
        return Err(SparseError::DimensionMismatch(format!(
            "mask over {} weights for a {:?} tensor",
            mask.n,
            w.shape()
        )));
    }
    let rows = w.shape()[0];
    let cols = w.len() / rows.max(1);
    let mut kept = vec![true; w.len()];
    for &i in &mask.pruned {
        let i = i as usize;
        if w.data()[i] != 0.0 {
            return Err(SparseError::MaskWeightDisagreement {
                layer: layer.to_string(),
                index: i,
            });
        }
        kept[i] = false;
    }
    let mut row_ptr = Vec::with_capacity(rows + 1);
    let (mut col_idx, mut vals) = (Vec::new(), Vec::new());
    row_ptr.push(0);
    for r in 0..rows {
        for j in 0..cols {
            let at = r * cols + j;
            if kept[at] {
                col_idx.push(j as u32);
                vals.push(w.data()[at]);
            }
        }
        row_ptr.push(col_idx.len() as u32);
    }
    CsrMatrix::new(rows, cols, row_ptr, col_idx, vals)
}

/// `a · b` for `b: a.cols × n`.
pub fn csr_matmul(a: &CsrMatrix, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (k, n) = b.dims2()?;
    if k != a.cols {
        return Err(SparseError::DimensionMismatch(format!(
            "{}×{} CSR times {k}×{n}",
            a.rows, a.cols
        )));
    }
    let mut c = vec![0.0; a.rows * n];
    a.matmul_into(b.data(), n, &mut c);
    Ok(Tensor::from_vec(&[a.rows, n], c)?)
}

/// One `C×H×W` sample through a convolution whose `Co × (Ci·kh·kw)` kernel
/// is stored as CSR.
pub fn sparse_conv_forward(x: &Tensor<f32>, layer: &CsrMatrix, bias: Option<&[f32]>, geom: ConvGeometry) -> Result<Tensor<f32>> {
    let [c, h, w] = x.shape()[..] else {
        return Err(SparseError::DimensionMismatch(format!("expected C×H×W, got {:?}", x.shape())));
    };
    if layer.cols != c * geom.kh * geom.kw {
        return Err(SparseError::DimensionMismatch(format!(
            "kernel has {} columns for {c} input channels",
            layer.cols
        )));
    }
    if bias.is_some_and(|b| b.len() != layer.rows) {
        return Err(SparseError::DimensionMismatch("bias length".into()));
    }
    let (ho, wo) = geom.output_size(h, w)?;
    let mut cols = vec![0.0; layer.cols * ho * wo];
    let mut out = vec![0.0; layer.rows * ho * wo];
    conv_sample(x.data(), (c, h, w), layer, bias, geom, &mut cols, &mut out);
    Ok(Tensor::from_vec(&[layer.rows, ho, wo], out)?)
}

fn conv_sample(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    layer: &CsrMatrix,
    bias: Option<&[f32]>,
    geom: ConvGeometry,
    cols: &mut [f32],
    out: &mut [f32],
) {
    let (ho, wo) = geom.output_size(h, w).expect("geometry checked by caller");
    let l = ho * wo;
    im2col_into(x, c, h, w, geom, cols, l, 0);
    layer.matmul_into(cols, l, out);
    if let Some(bias) = bias {
        for (row, &b) in out.chunks_exact_mut(l).zip(bias) {
            row.iter_mut().for_each(|v| *v += b);
        }
    }
}

/// One prunable layer in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    pub name: String,
    pub weights: CsrMatrix,
    pub bias: Option<Vec<f32>>,
}

/// A frozen model whose prunable layers are stored as CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub config: ModelConfig,
    layers: Vec<LayerSpec>,
    pub params: Vec<SparseLayer>,
    param_of: Vec<Option<usize>>,
}

impl SparseModel {
    /// Export a model under a frozen mask. `expected_pruned` gives the pruned
    /// count each layer must have, checked against the stored count.
    pub fn from_model(model: &Model<f32>, masks: &MaskState, expected_pruned: impl Fn(usize) -> usize) -> Result<Self> {
        if !masks.frozen {
            return Err(SparseError::NotFrozen);
        }
        if masks.layers.len() != model.params.len() {
            return Err(SparseError::DimensionMismatch(format!(
                "{} masks for {} layers",
                masks.layers.len(),
                model.params.len()
            )));
        }
        let names = model.param_names();
        let mut params = Vec::with_capacity(model.params.len());
        for ((p, m), name) in model.params.iter().zip(&masks.layers).zip(names) {
            let weights = to_csr_named(&p.w, m, true, &name)?;
            let expected = p.w.len() - expected_pruned(p.w.len());
            if weights.nnz() != expected {
                return Err(SparseError::NnzMismatch {
                    layer: name,
                    nnz: weights.nnz(),
                    expected,
                });
            }
            params.push(SparseLayer {
                name,
                weights,
                bias: p.b.as_ref().map(|b| b.data().to_vec()),
            });
        }
        Self::assemble(model.config.clone(), params)
    }

    /// Export the frozen state of a checkpoint; every layer must hold exactly
    /// `n - floor(r·n)` weights (all of them for the dense reference).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let prune = &ckpt.config.prune;
        let (method, r) = (prune.method, prune.r);
        Self::from_model(&ckpt.state.model, &ckpt.state.masks, |n| {
            if method == Method::Dense {
                0
            } else {
                pruned_count(n, r)
            }
        })
    }

    fn assemble(config: ModelConfig, params: Vec<SparseLayer>) -> Result<Self> {
        config.validate()?;
        let layers = crate::nn::build_layers(&config);
        let mut param_of = Vec::with_capacity(layers.len());
        let mut next = 0;
        for layer in &layers {
            match layer.weight_shape() {
                Some(shape) => {
                    let p = params.get(next).ok_or_else(|| SparseError::DimensionMismatch("too few layers".into()))?;
                    let rows = shape[0];
                    let cols = shape[1..].iter().product::<usize>();
                    if p.name != layer.name || p.weights.rows != rows || p.weights.cols != cols {
                        return Err(SparseError::DimensionMismatch(format!(
                            "layer {} ({}×{}) does not match {} ({rows}×{cols})",
                            p.name, p.weights.rows, p.weights.cols, layer.name
                        )));
                    }
                    if p.bias.as_ref().is_some_and(|b| b.len() != rows) {
                        return Err(SparseError::DimensionMismatch(format!("bias of {}", p.name)));
                    }
                    param_of.push(Some(next));
                    next += 1;
                }
                None => param_of.push(None),
            }
        }
        if next != params.len() {
            return Err(SparseError::DimensionMismatch(format!("{} layers for {next} slots", params.len())));
        }
        Ok(Self {
            config,
            layers,
            params,
            param_of,
        })
    }

    pub fn nnz(&self) -> usize {
        self.params.iter().map(|p| p.weights.nnz()).sum()
    }

    /// Dense model carrying the same (masked) weights.
    pub fn to_dense_model(&self) -> Result<Model<f32>> {
        let params = self
            .layers
            .iter()
            .filter_map(|l| l.weight_shape())
            .zip(&self.params)
            .map(|(shape, p)| {
                let w = Tensor::from_vec(&shape, p.weights.to_dense())?;
                let b = p.bias.as_ref().map(|b| Tensor::from_vec(&[b.len()], b.clone())).transpose()?;
                Ok(crate::nn::ParamTensor::new(w, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model::from_params(self.config.clone(), params)?)
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.weights.rows * p.weights.cols).sum()
    }

    /// Forward pass over a `B×3×H×W` batch.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(SparseError::DimensionMismatch(format!("expected B×3×H×W input, got {shape:?}")));
        }
        let batch = shape[0];
        let mut acts = vec![x.data().to_vec()];
        let mut shapes = vec![shape[1..].to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let (inp, ishape) = (&acts[i], &shapes[i]);
            let oshape = out_shape(&layer.kind, ishape)?;
            let per_in: usize = ishape.iter().product();
            let per_out: usize = oshape.iter().product();
            let out = match &layer.kind {
                LayerKind::Conv2d { kernel, pad, .. } => {
                    let p = &self.params[self.param_of[i].unwrap()];
                    let geom = ConvGeometry::square(*kernel, *pad);
                    let l = oshape[1] * oshape[2];
                    let mut cols = vec![0.0; p.weights.cols * l];
                    let mut y = vec![0.0; batch * per_out];
                    for b in 0..batch {
                        conv_sample(
                            &inp[b * per_in..(b + 1) * per_in],
                            (ishape[0], ishape[1], ishape[2]),
                            &p.weights,
                            p.bias.as_deref(),
                            geom,
                            &mut cols,
                            &mut y[b * per_out..(b + 1) * per_out],
                        );
                    }
                    y
                }
                LayerKind::Linear { .. } => {
                    let p = &self.params[self.param_of[i].unwrap()];
                    let mut y = vec![0.0; batch * per_out];
                    for b in 0..batch {
                        let yb = &mut y[b * per_out..(b + 1) * per_out];
                        p.weights.matmul_into(&inp[b * per_in..(b + 1) * per_in], 1, yb);
                        if let Some(bias) = &p.bias {
                            yb.iter_mut().zip(bias).for_each(|(v, &c)| *v += c);
                        }
                    }
                    y
                }
                LayerKind::Relu => {
                    let mut y = vec![0.0; inp.len()];
                    relu_forward_into(inp, &mut y);
                    y
                }
                LayerKind::PixelShuffle { scale } => {
                    let mut y = vec![0.0; inp.len()];
                    pixel_shuffle_into(inp, batch, (ishape[0], ishape[1], ishape[2]), *scale, &mut y);
                    y
                }
                LayerKind::ResidualAdd { skip_from } => {
                    if shapes[*skip_from] != *ishape {
                        return Err(SparseError::DimensionMismatch(format!("residual {:?} + {ishape:?}", shapes[*skip_from])));
                    }
                    inp.iter().zip(&acts[*skip_from]).map(|(&a, &b)| a + b).collect()
                }
                LayerKind::Reshape { .. } => inp.clone(),
            };
            acts.push(out);
            shapes.push(oshape);
        }
        let mut out_shape = vec![batch];
        out_shape.extend(shapes.last().unwrap());
        Ok(Tensor::from_vec(&out_shape, acts.pop().unwrap())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        put(&mut out, json.len());
        out.extend_from_slice(&json);
        put(&mut out, self.params.len());
        for p in &self.params {
            put(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put(&mut out, p.weights.rows);
            put(&mut out, p.weights.cols);
            put(&mut out, p.weights.nnz());
            out.push(p.bias.is_some() as u8);
        }
        for p in &self.params {
            let m = &p.weights;
            for v in m.row_ptr.iter().chain(&m.col_idx) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in m.vals.iter().chain(p.bias.iter().flatten()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if bytes.len() < MAGIC.len() + 4 {
            return Err(CheckpointError::Truncated.into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(CheckpointError::Checksum.into());
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let json_len = r.u32()?;
        let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
        let n_layers = r.u32()?;
        let mut table = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let len = r.u32()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("layer name is not UTF-8".into()))?;
            table.push((name, r.u32()?, r.u32()?, r.u32()?, r.u8()? != 0));
        }
        let mut params = Vec::with_capacity(table.len());
        for (name, rows, cols, nnz, has_bias) in table {
            let mut u32s = |n: usize| -> Result<Vec<u32>> {
                let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
                Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
            };
            let row_ptr = u32s(rows.checked_add(1).ok_or(CheckpointError::Truncated)?)?;
            let col_idx = u32s(nnz)?;
            let vals = u32s(nnz)?.into_iter().map(f32::from_bits).collect();
            let bias = if has_bias { Some(u32s(rows)?.into_iter().map(f32::from_bits).collect()) } else { None };
            let weights = CsrMatrix::new(rows, cols, row_ptr, col_idx, vals)?;
            params.push(SparseLayer { name, weights, bias });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)).into());
        }
        Self::assemble(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_atomic(path.as_ref(), &self.to_bytes())?)
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

/// Dense vs sparse timing, medians over the repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dense_ns: u64,
    pub sparse_ns: u64,
    pub speedup: f64,
    pub nnz_fraction: f64,
}

pub const DEFAULT_REPS: usize = 9;

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn median_ns(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Times `dense` and `sparse` alternately after one warm-up call each.
fn time_pair(reps: usize, mut dense: impl FnMut(), mut sparse: impl FnMut()) -> (u64, u64) {
    dense();
    sparse();
    let (mut d, mut s) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for _ in 0..reps {
        let t = Instant::now();
        dense();
        d.push(t.elapsed().as_nanos() as u64);
        let t = Instant::now();
        sparse();
        s.push(t.elapsed().as_nanos() as u64);
    }
    (median_ns(d), median_ns(s))
}

fn report(dense_ns: u64, sparse_ns: u64, nnz: usize, total: usize) -> BenchReport {
    BenchReport {
        dense_ns,
        sparse_ns,
        speedup: dense_ns as f64 / sparse_ns.max(1) as f64,
        nnz_fraction: nnz as f64 / total.max(1) as f64,
    }
}

/// Whole-model comparison: the dense model must already carry the masked
/// weights. Outputs are compared (max abs diff 1e-5) before any timing.
pub fn bench_compare(dense: &Model<f32>, sparse: &SparseModel, input: &Tensor<f32>, reps: usize) -> Result<BenchReport> {
    if reps < 3 {
        return Err(SparseError::TooFewReps(reps));
    }
    let want = dense.forward(input)?;
    let got = sparse.forward(input)?;
    let diff = max_abs_diff(want.data(), got.data());
    if want.shape() != got.shape() || diff > 1e-5 {
        return Err(SparseError::CorrectnessFailure(diff));
    }
    let (d, s) = time_pair(
        reps,
        || {
            std::hint::black_box(dense.forward(input).unwrap());
        },
        || {
            std::hint::black_box(sparse.forward(input).unwrap());
        },
    );
    Ok(report(d, s, sparse.nnz(), sparse.num_weights()))
}

/// Matrix-product core: `a · b` through the dense GEMM on `to_dense(a)`
/// against the CSR kernel, after checking they agree within 1e-6 relative.
pub fn bench_matmul(a: &CsrMatrix, b: &Tensor<f32>, reps: usize) -> Result<BenchReport> {
    if reps < 3 {
        return Err(SparseError::TooFewReps(reps));
    }
    let (k, n) = b.dims2()?;
    let got = csr_matmul(a, b)?;
    let dense_a = a.to_dense();
    let mut want = vec![0.0; a.rows * n];
    gemm(a.rows, k, n, &dense_a, b.data(), &mut want);
    let rel = want
        .iter()
        .zip(got.data())
        .map(|(&w, &g)| ((w - g).abs() / w.abs().max(1.0)) as f64)
        .fold(0.0, f64::max);
    if rel > 1e-6 {
        return Err(SparseError::CorrectnessFailure(rel));
    }
    let mut c = vec![0.0; a.rows * n];
    let mut c2 = vec![0.0; a.rows * n];
    let (d, s) = time_pair(
        reps,
        || {
            gemm(a.rows, k, n, &dense_a, b.data(), &mut c);
            std::hint::black_box(&c);
        },
        || {
            a.matmul_into(b.data(), n, &mut c2);
            std::hint::black_box(&c2);
        },
    );
    Ok(report(d, s, a.nnz(), a.rows * a.cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::pruning::{rank_select, zero_at, TrainState};
    use crate::rng::Rng;

    fn masked(rng: &mut Rng, rows: usize, cols: usize, r: f64) -> (Tensor<f32>, LayerMask) {
        let mut w = rng.uniform(-1.0, 1.0, rows * cols).unwrap().reshape(&[rows, cols]).unwrap();
        let sel = rank_select(w.data(), r).unwrap();
        zero_at(w.data_mut(), &sel.pruned);
        (w, LayerMask::from_selection(rows * cols, sel))
    }

    #[test]
    fn zero_matrix_fully_pruned() {
        let w = Tensor::<f32>::zeros(&[3, 4]);
        let mask = LayerMask::from_selection(12, rank_select(w.data(), 1.0).unwrap());
        let m = to_csr(&w, &mask, true).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.row_ptr(), &[0, 0, 0, 0]);
        assert_eq!(CsrMatrix::from_dense(w.data(), 3, 4).row_ptr(), &[0, 0, 0, 0]);
    }

    #[test]
    fn hand_layout_and_product() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0f32, 0.0, 0.0, 2.0]).unwrap();
        let mask = LayerMask::from_selection(4, rank_select(w.data(), 0.5).unwrap());
        let m = to_csr(&w, &mask, true).unwrap();
        assert_eq!(m.row_ptr(), &[0, 1, 2]);
        assert_eq!(m.col_idx(), &[0, 1]);
        assert_eq!(m.vals(), &[1.0, 2.0]);
        let x = Tensor::from_vec(&[2, 1], vec![1.0f32, 1.0]).unwrap();
        assert_eq!(csr_matmul(&m, &x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn identity_product() {
        let eye = CsrMatrix::from_dense(Tensor::<f32>::identity(5).data(), 5, 5);
        let x = Rng::new(1).uniform(-1.0, 1.0, 15).unwrap().reshape(&[5, 3]).unwrap();
        assert_eq!(csr_matmul(&eye, &x).unwrap(), x);
    }

    #[test]
    fn masked_round_trip_is_bit_identical() {
        let mut rng = Rng::new(2);
        for r in [0.0, 0.3, 0.9] {
            let (w, mask) = masked(&mut rng, 8, 8, r);
            let m = to_csr(&w, &mask, true).unwrap();
            assert_eq!(m.nnz(), 64 - pruned_count(64, r));
            let back = m.to_dense();
            assert!(back.iter().zip(w.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn contract_errors() {
        let mut rng = Rng::new(3);
        let (mut w, mask) = masked(&mut rng, 4, 4, 0.5);
        assert!(matches!(to_csr(&w, &mask, false), Err(SparseError::NotFrozen)));
        w.data_mut()[mask.pruned[0] as usize] = 0.5;
        assert!(matches!(
            to_csr(&w, &mask, true),
            Err(SparseError::MaskWeightDisagreement { index, .. }) if index == mask.pruned[0] as usize
        ));
        let a = CsrMatrix::from_dense(&[1.0, 2.0], 1, 2);
        assert!(matches!(csr_matmul(&a, &Tensor::zeros(&[3, 1])), Err(SparseError::DimensionMismatch(_))));
    }

    #[test]
    fn invalid_structures_rejected() {
        assert!(CsrMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![1, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(CsrMatrix::new(2, 2, vec![0, 1, 0], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![1], vec![1.0]).is_ok());
    }

    #[test]
    fn sparse_product_matches_dense_oracle() {
        let mut rng = Rng::new(4);
        let (w, mask) = masked(&mut rng, 256, 256, 0.99);
        let a = to_csr(&w, &mask, true).unwrap();
        let b = rng.uniform(-1.0, 1.0, 256 * 32).unwrap().reshape(&[256, 32]).unwrap();
        let got = csr_matmul(&a, &b).unwrap();
        // plain f64 triple loop as the reference
        for i in 0..256 {
            for j in 0..32 {
                let want: f64 = (0..256).map(|t| w.data()[i * 256 + t] as f64 * b.data()[t * 32 + j] as f64).sum();
                let g = got.data()[i * 32 + j] as f64;
                assert!((g - want).abs() <= 1e-6 * want.abs().max(1.0), "{g} vs {want}");
            }
        }
    }

    #[test]
    fn conv_special_kernels() {
        let mut rng = Rng::new(5);
        let x = rng.uniform(0.0, 1.0, 2 * 5 * 4).unwrap().reshape(&[2, 5, 4]).unwrap();
        let zero = CsrMatrix::from_dense(&[0.0; 3 * 2 * 9], 3, 18);
        let y = sparse_conv_forward(&x, &zero, Some(&[0.5, -1.0, 2.0]), ConvGeometry::square(3, 1)).unwrap();
        assert_eq!(y.shape(), &[3, 5, 4]);
        for (c, row) in y.data().chunks(20).enumerate() {
            assert!(row.iter().all(|&v| v == [0.5, -1.0, 2.0][c]));
        }
        // 1×1 kernel reading channel 1 only
        let k = CsrMatrix::from_dense(&[0.0, 3.0], 1, 2);
        let y = sparse_conv_forward(&x, &k, Some(&[0.25]), ConvGeometry::square(1, 0)).unwrap();
        for (o, &v) in y.data().iter().zip(&x.data()[20..]) {
            assert_eq!(*o, 3.0f32.mul_add(v, 0.0) + 0.25);
        }
        let bad = CsrMatrix::from_dense(&[1.0; 4], 1, 4);
        assert!(sparse_conv_forward(&x, &bad, None, ConvGeometry::square(3, 1)).is_err());
        let x1 = Tensor::<f32>::zeros(&[2, 1, 1]);
        assert!(sparse_conv_forward(&x1, &zero, None, ConvGeometry::square(3, 0)).is_err());
    }

    fn frozen_checkpoint(r: f64) -> Checkpoint {
        let mut config = RunConfig::desk();
        config.prune.method = Method::L1Oneshot;
        config.prune.r = r;
        let state = TrainState::init(&config).unwrap();
        Checkpoint { config, state }
    }

    #[test]
    fn model_matches_dense_masked_forward() {
        for r in [0.0, 0.95] {
            let ckpt = frozen_checkpoint(r);
            let sparse = SparseModel::from_checkpoint(&ckpt).unwrap();
            let total = ckpt.state.model.num_weights();
            let pruned: usize = ckpt.state.model.params.iter().map(|p| pruned_count(p.w.len(), r)).sum();
            assert_eq!(sparse.nnz(), total - pruned);
            let x = Rng::new(6).uniform(0.0, 1.0, 2 * 3 * 12 * 10).unwrap().reshape(&[2, 3, 12, 10]).unwrap();
            let want = ckpt.state.model.forward(&x).unwrap();
            let got = sparse.forward(&x).unwrap();
            assert_eq!(want.shape(), got.shape());
            assert!(max_abs_diff(want.data(), got.data()) <= 1e-5);
        }
    }

    #[test]
    fn unfrozen_model_rejected() {
        let mut config = RunConfig::desk();
        config.prune.method = Method::Issp;
        let state = TrainState::init(&config).unwrap();
        let ckpt = Checkpoint { config, state };
        assert!(matches!(SparseModel::from_checkpoint(&ckpt), Err(SparseError::NotFrozen)));
    }

    #[test]
    fn file_round_trip_and_damage() {
        let sparse = SparseModel::from_checkpoint(&frozen_checkpoint(0.9)).unwrap();
        let bytes = sparse.to_bytes();
        assert_eq!(&bytes[..6], b"ISSPs1");
        assert_eq!(SparseModel::from_bytes(&bytes).unwrap(), sparse);
        let dense = sparse.to_dense_model().unwrap();
        let x = Tensor::full(&[1, 3, 6, 6], 0.25f32);
        assert!(max_abs_diff(dense.forward(&x).unwrap().data(), sparse.forward(&x).unwrap().data()) <= 1e-5);
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(SparseModel::from_bytes(&bad).is_err());
        assert!(SparseModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sparse");
        sparse.save(&path).unwrap();
        assert_eq!(SparseModel::load(&path).unwrap(), sparse);
    }

    #[test]
    fn bench_contract() {
        let ckpt = frozen_checkpoint(0.0);
        let sparse = SparseModel::from_checkpoint(&ckpt).unwrap();
        let x = Tensor::full(&[1, 3, 8, 8], 0.5f32);
        assert!(matches!(bench_compare(&ckpt.state.model, &sparse, &x, 1), Err(SparseError::TooFewReps(1))));
        let rep = bench_compare(&ckpt.state.model, &sparse, &x, 3).unwrap();
        assert_eq!(rep.nnz_fraction, 1.0);
        assert!(rep.dense_ns > 0 && rep.sparse_ns > 0);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["dense_ns", "sparse_ns", "speedup", "nnz_fraction"] {
            assert!(json.get(key).is_some());
        }
    }
}
