//! The training loop: pruning stage, freeze, fine-tune.

use thiserror::Error;

use super::{
    add_at, baseline_mask, eta_growth, freeze_masks, issr_penalty, partition_changes, rank_select, scale_at, zero_at,
    zero_fraction, LayerMask, MaskState, Method, PruneError,
};
use crate::config::{RunConfig, STREAM_INIT, STREAM_MASK};
use crate::data::DataError;
use crate::metrics::{grad_stats, LayerStats, MetricRow, MetricSink};
use crate::nn::{adam_step_all, lr_schedule, AdamState, Model, NnError};
use crate::rng::Rng;
use crate::tensor::{Tensor, Workspace};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("writing metrics: {0}")]
    Sink(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Supplies the LR/HR batch for iteration `k` (1-based).
pub trait BatchSource {
    fn batch(&mut self, k: u64) -> Result<(Tensor<f32>, Tensor<f32>), DataError>;
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Iterations completed.
    pub k: u64,
    pub model: Model<f32>,
    pub masks: MaskState,
    pub adam: AdamState,
    /// Mask stream, advanced only by the scratch baseline.
    pub rng: Rng,
    /// Current ISS-R penalty strength.
    pub eta: f64,
}

impl TrainState {
    /// Initial weights and masks. Baselines start frozen; iterative methods
    /// with no pruning iterations freeze on the initial weights.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let mut model = Model::new(cfg.model.clone(), &mut cfg.stream(STREAM_INIT))?;
        let mut rng = cfg.stream(STREAM_MASK);
        let p = &cfg.prune;
        let masks = if p.method.is_iterative() {
            let mut m = MaskState::unselected(&model.params);
            if p.k_p == 0 {
                freeze_masks(&mut m, &mut model.params, p.r)?;
            }
            m
        } else {
            baseline_mask(p.method, &mut model.params, p.r, &mut rng)?
        };
        Ok(Self {
            k: 0,
            model,
            masks,
            adam: cfg.optimizer.initial_state(cfg.schedule.lr0),
            rng,
            eta: p.eta0,
        })
    }

    /// Runs one iteration and returns its metric row.
    pub fn step(&mut self, cfg: &RunConfig, data: &mut dyn BatchSource, ws: &mut Workspace<f32>) -> Result<MetricRow> {
        let p = &cfg.prune;
        let k = self.k + 1;
        self.adam.lr = lr_schedule(k - 1, cfg.schedule.lr0, cfg.schedule.half_every);
        let pruning = p.method.is_iterative() && !self.masks.frozen;
        if pruning && p.method == Method::Issr {
            self.eta = eta_growth(self.eta, p.delta, k, p.k_eta, p.eta_growth);
        }

        let n_layers = self.model.params.len();
        let mut flips = vec![0.0; n_layers];
        if pruning {
            for (l, param) in self.model.params.iter_mut().enumerate() {
                let w = param.w.data_mut();
                let sel = rank_select(w, p.r)?;
                let prev = &self.masks.layers[l];
                if k > 1 {
                    flips[l] = 1000.0 * partition_changes(&prev.pruned, &sel.pruned) as f64 / w.len() as f64;
                }
                match p.method {
                    Method::Iht => zero_at(w, &sel.pruned),
                    Method::Issp => scale_at(w, &sel.pruned, p.alpha),
                    _ => {}
                }
                self.masks.layers[l] = LayerMask::from_selection(w.len(), sel);
            }
        }
        let zeros: Vec<f64> = self.model.params.iter().map(|q| zero_fraction(q.w.data())).collect();

        let (lr, hr) = data.batch(k)?;
        check_batch(&lr, &hr, cfg)?;
        let loss = self.model.forward_backward_in(&lr, &hr, ws)?;
        let grads: Vec<_> = self.model.params.iter().map(|q| grad_stats(q.grad_w.data())).collect();

        // the penalty is evaluated on the weights the gradient saw
        let penalties: Vec<Vec<f32>> = if pruning && p.method == Method::Issr {
            self.model
                .params
                .iter()
                .zip(&self.masks.layers)
                .map(|(q, m)| issr_penalty(q.w.data(), &m.pruned, self.eta))
                .collect()
        } else {
            Vec::new()
        };
        adam_step_all(&mut self.model.params, &mut self.adam);
        for ((q, m), d) in self.model.params.iter_mut().zip(&self.masks.layers).zip(&penalties) {
            add_at(q.w.data_mut(), &m.pruned, d);
        }
        if self.masks.frozen {
            self.masks.apply(&mut self.model.params);
        } else if k == p.k_p {
            freeze_masks(&mut self.masks, &mut self.model.params, p.r)?;
        }
        self.k = k;

        let names = self.model.param_names();
        Ok(MetricRow {
            k,
            loss: loss as f64,
            lr: self.adam.lr,
            layers: (0..n_layers)
                .map(|l| LayerStats {
                    layer: names[l].clone(),
                    flips_permille: flips[l],
                    grad: grads[l],
                    zero_fraction: zeros[l],
                })
                .collect(),
        })
    }

    /// Steps until `self.k == until`, emitting every row to `sink`.
    pub fn run_until(&mut self, cfg: &RunConfig, data: &mut dyn BatchSource, sink: &mut dyn MetricSink, until: u64) -> Result<()> {
        let mut ws = Workspace::new();
        while self.k < until {
            let row = self.step(cfg, data, &mut ws)?;
            sink.record(&row)?;
        }
        Ok(())
    }
}

fn check_batch(lr: &Tensor<f32>, hr: &Tensor<f32>, cfg: &RunConfig) -> Result<(), DataError> {
    let s = cfg.model.scale;
    let ok = match (lr.shape(), hr.shape()) {
        (&[b, 3, h, w], &[b2, 3, h2, w2]) => b == b2 && b > 0 && h * s == h2 && w * s == w2,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(DataError::ShapeMismatch(format!(
            "batch LR {:?} / HR {:?} does not match scale {s}",
            lr.shape(),
            hr.shape()
        )))
    }
}

/// Full schedule: `K = k_p + k_ft` iterations from a fresh initialization.
pub fn run_training(cfg: &RunConfig, data: &mut dyn BatchSource, sink: &mut dyn MetricSink) -> Result<TrainState> {
    let mut state = TrainState::init(cfg)?;
    state.run_until(cfg, data, sink, cfg.schedule.k)?;
    debug_assert!(state.masks.frozen);
    Ok(state)
}
