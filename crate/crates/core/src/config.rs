//! Run configuration: JSON on disk, every field explicit once resolved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ResizeFilter;
use crate::nn::{AdamState, ModelConfig};
use crate::pruning::PruneConfig;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?}; expected desk or full")]
    UnknownPreset(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Adam constants; the step counter and learning rate live in the
/// training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamState::default();
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn initial_state(&self, lr: f64) -> AdamState {
        AdamState {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            t: 0,
            lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Total iterations; must equal `prune.k_p + prune.k_ft`.
    pub k: u64,
    pub lr0: f64,
    /// The learning rate halves every `half_every` iterations.
    pub half_every: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            k: 6000,
            lr0: 2e-4,
            half_every: 250_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Text file listing PPM paths. Exactly one of `manifest` and
    /// `synthetic` is set.
    pub manifest: Option<PathBuf>,
    /// Number of generated texture images.
    pub synthetic: Option<usize>,
    /// Side of each generated image.
    pub synth_size: usize,
    pub synth_seed: u64,
    /// Fraction of images held out for evaluation, chosen by id hash.
    pub val_fraction: f64,
    pub split_seed: u64,
    /// LR patch side.
    pub patch: usize,
    pub batch: usize,
    pub augment: bool,
    pub filter: ResizeFilter,
    /// Border removed before PSNR; `None` means the model scale.
    pub eval_crop: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synthetic: Some(48),
            synth_size: 64,
            synth_seed: 0,
            val_fraction: 0.2,
            split_seed: 0,
            patch: 16,
            batch: 16,
            augment: true,
            filter: ResizeFilter::Antialias,
            eval_crop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub model: ModelConfig,
    pub prune: PruneConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Stream ids under the run seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_MASK: u64 = 2;
pub(crate) const STREAM_DATA: u64 = 3;

impl RunConfig {
    /// Small CPU-scale defaults: 6000 iterations, 2000 of them pruning.
    pub fn desk() -> Self {
        Self {
            seed: 42,
            output: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            prune: PruneConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            data: DataConfig::default(),
        }
    }

    /// Full-length schedule: 5e5 iterations, 1e5 pruning, batch 32,
    /// 64-pixel patches.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.prune.k_p = 100_000;
        c.prune.k_ft = 400_000;
        c.schedule.k = 500_000;
        c.data.batch = 32;
        c.data.patch = 64;
        c.data.synth_size = 192;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses JSON. Fields missing from the file keep the values of the
    /// preset named by an optional top-level `"preset"` key (desk when
    /// absent).
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let preset = match value.as_object_mut().and_then(|o| o.remove("preset")) {
            None => Self::desk(),
            Some(serde_json::Value::String(name)) => Self::preset(&name)?,
            Some(other) => return Err(ConfigError::Invalid(format!("preset must be a string, got {other}"))),
        };
        let mut base = serde_json::to_value(preset)?;
        merge(&mut base, value);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Every field materialized.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.prune.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.optimizer
            .initial_state(self.schedule.lr0)
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.schedule.k != self.prune.total_iters() {
            return bad(format!(
                "schedule.k = {} but prune.k_p + prune.k_ft = {} + {}",
                self.schedule.k, self.prune.k_p, self.prune.k_ft
            ));
        }
        if self.schedule.half_every == 0 {
            return bad("schedule.half_every must be at least 1".into());
        }
        let d = &self.data;
        match (&d.manifest, d.synthetic) {
            (Some(_), Some(_)) => return bad("set only one of data.manifest and data.synthetic".into()),
            (None, None) => return bad("set data.manifest or data.synthetic".into()),
            (None, Some(0)) => return bad("data.synthetic must be positive".into()),
            _ => {}
        }
        if d.patch == 0 || d.batch == 0 {
            return bad("data.patch and data.batch must be positive".into());
        }
        if !(0.0..1.0).contains(&d.val_fraction) {
            return bad(format!("data.val_fraction must lie in [0,1), got {}", d.val_fraction));
        }
        if d.synthetic.is_some() && d.synth_size < (self.model.scale * d.patch).max(16) {
            return bad(format!(
                "data.synth_size {} cannot hold a {}-pixel HR patch",
                d.synth_size,
                self.model.scale * d.patch
            ));
        }
        Ok(())
    }

    /// PSNR border crop actually used.
    pub fn eval_crop(&self) -> usize {
        self.data.eval_crop.unwrap_or(self.model.scale)
    }

    pub(crate) fn stream(&self, id: u64) -> Rng {
        Rng::stream(self.seed, id)
    }

    /// Seed of the training patch stream.
    pub fn data_seed(&self) -> u64 {
        self.stream(STREAM_DATA).next_u64()
    }
}

/// Recursive object merge: keys in `patch` override those in `base`.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::Method;

    #[test]
    fn presets_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::full().validate().unwrap();
        assert!(matches!(RunConfig::preset("huge"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn resolved_round_trip() {
        let c = RunConfig::desk();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_from_preset() {
        let c = RunConfig::from_json(r#"{"prune": {"method": "iht", "r": 0.9}, "seed": 3}"#).unwrap();
        assert_eq!(c.prune.method, Method::Iht);
        assert_eq!(c.prune.r, 0.9);
        assert_eq!(c.prune.alpha, 0.95);
        assert_eq!(c.seed, 3);
        let p = RunConfig::from_json(r#"{"preset": "full", "seed": 1}"#).unwrap();
        assert_eq!(p.schedule.k, 500_000);
    }

    #[test]
    fn inconsistent_iterations_rejected() {
        let err = RunConfig::from_json(r#"{"schedule": {"k": 100}}"#).unwrap_err();
        assert!(err.to_string().contains("schedule.k"), "{err}");
        assert!(RunConfig::from_json(r#"{"prune": {"alpha": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"data": {"manifest": "x.txt"}}"#).is_err());
    }
}
