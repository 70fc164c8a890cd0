//! The miniature super-resolution backbone: layers with hand-written
//! backward passes, the MSE objective and Adam.

mod adam;
pub mod layers;
mod model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

pub use adam::{adam_step, adam_step_all, adam_update, lr_schedule, AdamState};
pub use layers::{conv2d, mse_into, conv2d_backward, linear, linear_backward, mse_loss, pixel_shuffle, pixel_unshuffle, ConvGrads};
pub use model::{build_layers, ForwardTrace, Model};
pub(crate) use model::out_shape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    Config(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    MiniEdsr,
    MiniMlp,
}

/// Weight initialization; biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    #[default]
    KaimingUniform,
    /// Uniform in `±sqrt(1 / fan_in)`.
    FanInUniform,
}

impl Init {
    pub fn bound(self, fan_in: usize) -> f64 {
        let gain = match self {
            Init::KaimingUniform => 6.0,
            Init::FanInUniform => 1.0,
        };
        (gain / fan_in as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub n_blocks: usize,
    pub channels: usize,
    pub scale: usize,
    /// LR patch side for `mini_mlp`, whose first layer sees a flattened patch.
    #[serde(default = "default_mlp_patch")]
    pub mlp_patch: usize,
    #[serde(default)]
    pub init: Init,
}

fn default_mlp_patch() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::MiniEdsr,
            n_blocks: 2,
            channels: 16,
            scale: 2,
            mlp_patch: default_mlp_patch(),
            init: Init::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(NnError::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.channels == 0 {
            return Err(NnError::Config("channels must be positive".into()));
        }
        if self.arch == Arch::MiniMlp && self.mlp_patch == 0 {
            return Err(NnError::Config("mlp_patch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, pad: usize },
    Linear { n_in: usize, n_out: usize },
    Relu,
    PixelShuffle { scale: usize },
    /// Adds the activation with index `skip_from` (0 is the model input,
    /// `i + 1` the output of layer `i`).
    ResidualAdd { skip_from: usize },
    /// Per-sample reshape; glue for the MLP variant.
    Reshape { dims: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    /// Weight-bearing layers are pruned; everything else passes through.
    pub fn prunable(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => Some(vec![out_ch, in_ch, kernel, kernel]),
            LayerKind::Linear { n_in, n_out } => Some(vec![n_out, n_in]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv2d { in_ch, kernel, .. } => Some(in_ch * kernel * kernel),
            LayerKind::Linear { n_in, .. } => Some(n_in),
            _ => None,
        }
    }
}

/// A weight tensor with its bias, gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T = f32> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
    pub grad_w: Tensor<T>,
    pub grad_b: Option<Tensor<T>>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub adam_m_b: Option<Tensor<T>>,
    pub adam_v_b: Option<Tensor<T>>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(w: Tensor<T>, b: Option<Tensor<T>>) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape());
        Self {
            grad_w: zeros(&w),
            adam_m: zeros(&w),
            adam_v: zeros(&w),
            grad_b: b.as_ref().map(zeros),
            adam_m_b: b.as_ref().map(zeros),
            adam_v_b: b.as_ref().map(zeros),
            w,
            b,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.data_mut().fill(T::zero());
        if let Some(g) = self.grad_b.as_mut() {
            g.data_mut().fill(T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamTensor<U> {
        ParamTensor {
            w: self.w.cast(),
            b: self.b.as_ref().map(Tensor::cast),
            grad_w: self.grad_w.cast(),
            grad_b: self.grad_b.as_ref().map(Tensor::cast),
            adam_m: self.adam_m.cast(),
            adam_v: self.adam_v.cast(),
            adam_m_b: self.adam_m_b.as_ref().map(Tensor::cast),
            adam_v_b: self.adam_v_b.as_ref().map(Tensor::cast),
        }
    }
}
