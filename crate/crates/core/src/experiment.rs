//! Glue from a [`RunConfig`] to datasets, training and held-out scores.

use crate::config::RunConfig;
use crate::data::{load_manifest, split_by_id, synth_texture, DataError, ImageU8, PatchSampler};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::metrics::MetricSink;
use crate::pruning::{run_training, TrainError, TrainState};
use crate::rng::Rng;

/// Training patch stream and held-out images.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: PatchSampler,
    pub val: Vec<(String, ImageU8)>,
}

/// Image set the config names, in id order.
pub fn load_images(cfg: &RunConfig) -> Result<Vec<(String, ImageU8)>, DataError> {
    match (&cfg.data.manifest, cfg.data.synthetic) {
        (Some(path), _) => load_manifest(path),
        (None, Some(n)) => {
            let side = cfg.data.synth_size;
            (0..n)
                .map(|i| {
                    let img = synth_texture(&mut Rng::stream(cfg.data.synth_seed, i as u64), side, side)?;
                    Ok((format!("synth-{i:04}"), img))
                })
                .collect()
        }
        (None, None) => Err(DataError::Empty("no manifest or synthetic count configured".into())),
    }
}

impl Datasets {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, DataError> {
        let images = load_images(cfg)?;
        let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
        let (train_idx, val_idx) = split_by_id(&ids, cfg.data.val_fraction, cfg.data.split_seed);
        if train_idx.is_empty() {
            return Err(DataError::Empty("the split left no training images".into()));
        }
        let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
        let train = PatchSampler::new(pick(&train_idx), cfg.model.scale, cfg.data.patch, cfg.data.batch, cfg.data_seed())?
            .with_filter(cfg.data.filter)
            .with_augment(cfg.data.augment);
        Ok(Self {
            train,
            val: pick(&val_idx),
        })
    }

    pub fn evaluate(&self, state: &TrainState, cfg: &RunConfig) -> Result<EvalReport, EvalError> {
        evaluate(&state.model, &self.val, cfg.eval_crop(), cfg.data.filter)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Train from scratch and score the held-out images.
pub fn run_and_evaluate(cfg: &RunConfig, sink: &mut dyn MetricSink) -> Result<(TrainState, EvalReport), ExperimentError> {
    let mut data = Datasets::from_config(cfg)?;
    let state = run_training(cfg, &mut data.train, sink)?;
    let report = data.evaluate(&state, cfg)?;
    Ok((state, report))
}
