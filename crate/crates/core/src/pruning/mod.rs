//! Magnitude selection, the five pruning schedules and mask freezing.
//!
//! Selection is rank based: a layer of `n` weights always has exactly
//! `floor(r·n)` weights designated unimportant, chosen as the smallest `|w|`
//! with ties broken by ascending index.

mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamTensor;
use crate::rng::Rng;
use crate::tensor::Scalar;

pub use train::{run_training, BatchSource, TrainError, TrainState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PruneError {
    #[error("cannot select from an empty layer")]
    EmptyLayer,
    #[error("masks are already frozen")]
    AlreadyFrozen,
    #[error("masks are not frozen")]
    NotFrozen,
    #[error("invalid pruning config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = PruneError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Random binary mask fixed at initialization.
    Scratch,
    /// Magnitude mask computed once on the initial weights.
    L1Oneshot,
    /// Iterative hard thresholding.
    Iht,
    /// Iterative soft shrinkage by an l2 penalty that grows over time.
    Issr,
    /// Iterative soft shrinkage by a constant attenuation factor.
    Issp,
    /// No pruning at all; the reference that every `r = 0` run must match.
    Dense,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Scratch,
        Method::L1Oneshot,
        Method::Iht,
        Method::Issr,
        Method::Issp,
        Method::Dense,
    ];

    /// Methods that re-select the partition every pruning iteration.
    pub fn is_iterative(self) -> bool {
        matches!(self, Method::Iht | Method::Issr | Method::Issp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Scratch => "scratch",
            Method::L1Oneshot => "l1_oneshot",
            Method::Iht => "iht",
            Method::Issr => "issr",
            Method::Issp => "issp",
            Method::Dense => "dense",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PruneError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PruneError::Config(format!("unknown method {s:?}")))
    }
}

/// How the ISS-R penalty strength grows every `k_eta` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaGrowth {
    /// `eta · (1 + delta)`
    #[default]
    Multiplicative,
    /// `eta + delta`
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub method: Method,
    /// Fraction of each prunable layer designated unimportant.
    pub r: f64,
    /// Attenuation applied to unimportant weights by ISS-P.
    pub alpha: f64,
    pub eta0: f64,
    pub delta: f64,
    pub k_eta: u64,
    #[serde(default)]
    pub eta_growth: EtaGrowth,
    /// Pruning-stage iterations.
    pub k_p: u64,
    /// Fine-tune iterations after the freeze.
    pub k_ft: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            method: Method::Issp,
            r: 0.95,
            alpha: 0.95,
            eta0: 1e-4,
            delta: 0.1,
            k_eta: 100,
            eta_growth: EtaGrowth::Multiplicative,
            k_p: 2000,
            k_ft: 4000,
        }
    }
}

impl PruneConfig {
    pub fn total_iters(&self) -> u64 {
        self.k_p + self.k_ft
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PruneError::Config(msg));
        if !(0.0..=1.0).contains(&self.r) {
            return bad(format!("r must lie in [0,1], got {}", self.r));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return bad(format!("eta0 must be finite and non-negative, got {}", self.eta0));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be finite and non-negative, got {}", self.delta));
        }
        if self.k_eta == 0 {
            return bad("k_eta must be at least 1".into());
        }
        Ok(())
    }
}

/// Number of weights designated unimportant in a layer of `n`.
pub fn pruned_count(n: usize, r: f64) -> usize {
    ((r * n as f64).floor() as usize).min(n)
}

/// Output of [`rank_select`]: sorted unimportant indices and the smallest
/// kept magnitude (`+inf` when nothing is kept).
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pruned: Vec<u32>,
    pub tau: f64,
}

pub fn rank_select<T: Scalar>(w: &[T], r: f64) -> Result<Selection> {
    let n = w.len();
    if n == 0 {
        return Err(PruneError::EmptyLayer);
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(PruneError::Config(format!("r must lie in [0,1], got {r}")));
    }
    let count = pruned_count(n, r);
    let key = |i: u32| (w[i as usize].as_f64().abs(), i);
    let cmp = |a: &u32, b: &u32| {
        let (ma, ia) = key(*a);
        let (mb, ib) = key(*b);
        ma.total_cmp(&mb).then(ia.cmp(&ib))
    };
    let mut order: Vec<u32> = (0..n as u32).collect();
    if count > 0 && count < n {
        order.select_nth_unstable_by(count, cmp);
    }
    let tau = if count == n {
        f64::INFINITY
    } else {
        order[count..].iter().map(|&i| key(i).0).fold(f64::INFINITY, f64::min)
    };
    order.truncate(count);
    order.sort_unstable();
    Ok(Selection { pruned: order, tau })
}

pub fn zero_at<T: Scalar>(w: &mut [T], idx: &[u32]) {
    for &i in idx {
        w[i as usize] = T::zero();
    }
}

pub fn scale_at<T: Scalar>(w: &mut [T], idx: &[u32], alpha: f64) {
    let a = T::from_f64(alpha);
    for &i in idx {
        w[i as usize] = w[i as usize] * a;
    }
}

/// Hard thresholding: zero the `floor(r·n)` smallest-magnitude weights.
pub fn iht_step<T: Scalar>(w: &mut [T], r: f64) -> Result<Selection> {
    let sel = rank_select(w, r)?;
    zero_at(w, &sel.pruned);
    Ok(sel)
}

/// Soft shrinkage: scale the unimportant weights by `alpha` in place.
/// `alpha = 0` degenerates to [`iht_step`].
pub fn issp_step<T: Scalar>(w: &mut [T], r: f64, alpha: f64) -> Result<Selection> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(PruneError::Config(format!("alpha must lie in [0,1), got {alpha}")));
    }
    let sel = rank_select(w, r)?;
    scale_at(w, &sel.pruned, alpha);
    Ok(sel)
}

/// The ISS-R term `-2·eta·θ` for each unimportant weight, in the order of
/// `pruned`. Evaluated on the weights before the optimizer step and added
/// after it, without the learning-rate factor.
pub fn issr_penalty<T: Scalar>(w: &[T], pruned: &[u32], eta: f64) -> Vec<T> {
    let c = T::from_f64(-2.0 * eta);
    pruned.iter().map(|&i| c * w[i as usize]).collect()
}

pub fn add_at<T: Scalar>(w: &mut [T], idx: &[u32], deltas: &[T]) {
    debug_assert_eq!(idx.len(), deltas.len());
    for (&i, &d) in idx.iter().zip(deltas) {
        w[i as usize] = w[i as usize] + d;
    }
}

/// `eta` after iteration `k`: grows once every `k_eta` iterations.
pub fn eta_growth(eta: f64, delta: f64, k: u64, k_eta: u64, mode: EtaGrowth) -> f64 {
    if k == 0 || k_eta == 0 || !k.is_multiple_of(k_eta) {
        return eta;
    }
    match mode {
        EtaGrowth::Multiplicative => eta * (1.0 + delta),
        EtaGrowth::Additive => eta + delta,
    }
}

/// Number of positions whose important/unimportant designation differs
/// between two sorted index sets.
pub fn partition_changes(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * common
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMask {
    /// Weight count of the layer.
    pub n: usize,
    /// Sorted unimportant indices.
    pub pruned: Vec<u32>,
    pub tau: f32,
}

impl LayerMask {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            pruned: Vec::new(),
            tau: 0.0,
        }
    }

    pub fn from_selection(n: usize, sel: Selection) -> Self {
        Self {
            n,
            pruned: sel.pruned,
            tau: sel.tau as f32,
        }
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned.len()
    }

    /// Dense multiplier: 1 for kept weights, `pruned_value` for the rest.
    pub fn values(&self, pruned_value: f32) -> Vec<f32> {
        let mut m = vec![1.0; self.n];
        for &i in &self.pruned {
            m[i as usize] = pruned_value;
        }
        m
    }
}

/// Per prunable layer partition plus the freeze flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskState {
    pub layers: Vec<LayerMask>,
    pub frozen: bool,
}

impl MaskState {
    /// Nothing selected yet, not frozen.
    pub fn unselected<T: Scalar>(params: &[ParamTensor<T>]) -> Self {
        Self {
            layers: params.iter().map(|p| LayerMask::empty(p.w.len())).collect(),
            frozen: false,
        }
    }

    /// Frozen all-keep mask; used by the dense reference.
    pub fn dense<T: Scalar>(params: &[ParamTensor<T>]) -> Self {
        Self {
            frozen: true,
            ..Self::unselected(params)
        }
    }

    /// Mask values per layer: `{1, alpha}` before the freeze, `{1, 0}` after.
    pub fn values(&self, alpha: f32) -> Vec<Vec<f32>> {
        let v = if self.frozen { 0.0 } else { alpha };
        self.layers.iter().map(|l| l.values(v)).collect()
    }

    /// Zero every unimportant weight. Only meaningful once frozen.
    pub fn apply<T: Scalar>(&self, params: &mut [ParamTensor<T>]) {
        for (p, l) in params.iter_mut().zip(&self.layers) {
            zero_at(p.w.data_mut(), &l.pruned);
        }
    }

    pub fn check_shapes<T: Scalar>(&self, params: &[ParamTensor<T>]) -> Result<()> {
        if self.layers.len() != params.len() {
            return Err(PruneError::ShapeMismatch(format!(
                "{} masks for {} layers",
                self.layers.len(),
                params.len()
            )));
        }
        for (i, (l, p)) in self.layers.iter().zip(params).enumerate() {
            if l.n != p.w.len() {
                return Err(PruneError::ShapeMismatch(format!("layer {i}: mask for {} weights, layer has {}", l.n, p.w.len())));
            }
            if l.pruned.windows(2).any(|w| w[0] >= w[1]) || l.pruned.last().is_some_and(|&i| i as usize >= l.n) {
                return Err(PruneError::ShapeMismatch(format!("layer {i}: pruned indices unsorted or out of range")));
            }
        }
        Ok(())
    }
}

/// Final selection on the current weights, zero the unimportant set and
/// freeze it.
pub fn freeze_masks<T: Scalar>(masks: &mut MaskState, params: &mut [ParamTensor<T>], r: f64) -> Result<()> {
    if masks.frozen {
        return Err(PruneError::AlreadyFrozen);
    }
    let mut layers = Vec::with_capacity(params.len());
    for p in params.iter_mut() {
        let sel = iht_step(p.w.data_mut(), r)?;
        layers.push(LayerMask::from_selection(p.w.len(), sel));
    }
    masks.layers = layers;
    masks.frozen = true;
    Ok(())
}

/// Frozen mask at initialization for the one-shot baselines; zeroes the
/// unimportant weights. `Dense` yields the all-keep mask.
pub fn baseline_mask<T: Scalar>(method: Method, params: &mut [ParamTensor<T>], r: f64, rng: &mut Rng) -> Result<MaskState> {
    let mut masks = MaskState::unselected(params);
    match method {
        Method::Scratch => {
            for (p, l) in params.iter_mut().zip(masks.layers.iter_mut()) {
                let n = p.w.len();
                if n == 0 {
                    return Err(PruneError::EmptyLayer);
                }
                let count = pruned_count(n, r);
                let mut idx: Vec<u32> = (0..n as u32).collect();
                // partial Fisher-Yates: the first `count` slots are a uniform sample
                for i in 0..count {
                    let j = i + rng.below((n - i) as u64) as usize;
                    idx.swap(i, j);
                }
                idx.truncate(count);
                idx.sort_unstable();
                let tau = if count == n {
                    f64::INFINITY
                } else {
                    let w = p.w.data();
                    let mut keep = vec![true; n];
                    idx.iter().for_each(|&i| keep[i as usize] = false);
                    (0..n).filter(|&i| keep[i]).map(|i| w[i].as_f64().abs()).fold(f64::INFINITY, f64::min)
                };
                zero_at(p.w.data_mut(), &idx);
                *l = LayerMask::from_selection(n, Selection { pruned: idx, tau });
            }
            masks.frozen = true;
        }
        Method::L1Oneshot => freeze_masks(&mut masks, params, r)?,
        Method::Dense => masks.frozen = true,
        other => {
            return Err(PruneError::Config(format!("{other} is not a one-shot baseline")));
        }
    }
    Ok(masks)
}

/// Fraction of exactly-zero weights per prunable layer.
pub fn sparsity_audit<T: Scalar>(params: &[ParamTensor<T>], masks: &MaskState) -> Result<Vec<f64>> {
    if !masks.frozen {
        return Err(PruneError::NotFrozen);
    }
    masks.check_shapes(params)?;
    Ok(params.iter().map(|p| zero_fraction(p.w.data())).collect())
}

pub fn zero_fraction<T: Scalar>(w: &[T]) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.iter().filter(|v| v.is_zero()).count() as f64 / w.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn param(w: &[f32]) -> ParamTensor<f32> {
        ParamTensor::new(Tensor::from_vec(&[w.len()], w.to_vec()).unwrap(), None)
    }

    #[test]
    fn rank_select_picks_smallest_magnitudes() {
        let s = rank_select(&[0.3f32, -0.1, 0.5, 0.05], 0.5).unwrap();
        assert_eq!(s.pruned, vec![1, 3]);
        assert!((s.tau - 0.3).abs() < 1e-7);
    }

    #[test]
    fn rank_select_zero_ratio() {
        let s = rank_select(&[0.3f32, -0.1], 0.0).unwrap();
        assert!(s.pruned.is_empty());
        assert!((s.tau - 0.1).abs() < 1e-7);
    }

    #[test]
    fn rank_select_ties_by_index() {
        let s = rank_select(&[0.2f32; 4], 0.5).unwrap();
        assert_eq!(s.pruned, vec![0, 1]);
    }

    #[test]
    fn rank_select_everything() {
        let s = rank_select(&[1.0f32, -2.0], 1.0).unwrap();
        assert_eq!(s.pruned, vec![0, 1]);
        assert_eq!(s.tau, f64::INFINITY);
    }

    #[test]
    fn rank_select_empty_layer() {
        assert_eq!(rank_select::<f32>(&[], 0.5), Err(PruneError::EmptyLayer));
    }

    #[test]
    fn iht_examples() {
        let mut w = [1.0f32, -0.2, 0.05];
        iht_step(&mut w, 1.0 / 3.0).unwrap();
        assert_eq!(w, [1.0, -0.2, 0.0]);
        let once = w;
        iht_step(&mut w, 1.0 / 3.0).unwrap();
        assert_eq!(w, once);
        let mut w = [1.0f32, -0.2, 0.05];
        iht_step(&mut w, 0.0).unwrap();
        assert_eq!(w, [1.0, -0.2, 0.05]);
    }

    #[test]
    fn issp_example() {
        let mut w = [0.3f32, -0.1, 0.5, 0.05];
        issp_step(&mut w, 0.5, 0.95).unwrap();
        let want = [0.3f32, -0.1 * 0.95, 0.5, 0.05 * 0.95];
        assert_eq!(w, want);
        assert!((w[1] + 0.095).abs() < 1e-7 && (w[3] - 0.0475).abs() < 1e-7);
    }

    #[test]
    fn issp_geometric_decay() {
        let mut w = [1.0f32, 0.5, 0.25, 0.125];
        let start = w[3];
        for t in 1..=20 {
            issp_step(&mut w, 0.25, 0.95).unwrap();
            let want = start as f64 * 0.95f64.powi(t);
            assert!(((w[3] as f64) - want).abs() <= want * t as f64 * f32::EPSILON as f64);
        }
    }

    #[test]
    fn issp_alpha_zero_is_iht() {
        let mut a = [0.7f32, -0.1, 0.4, 0.05, -0.9];
        let mut b = a;
        issp_step(&mut a, 0.6, 0.0).unwrap();
        iht_step(&mut b, 0.6).unwrap();
        assert_eq!(a, b);
        assert!(issp_step(&mut a, 0.6, 1.0).is_err());
    }

    #[test]
    fn issr_penalty_example() {
        let w = [-0.1f64, 0.8];
        let d = issr_penalty(&w, &[0], 0.01);
        let mut after = w;
        add_at(&mut after, &[0], &d);
        assert!((after[0] + 0.098).abs() < 1e-15);
        assert_eq!(after[1], 0.8);
        assert_eq!(issr_penalty(&w, &[0], 0.0), vec![-0.0]);
    }

    #[test]
    fn eta_growth_examples() {
        let m = EtaGrowth::Multiplicative;
        assert!((eta_growth(0.01, 0.1, 100, 100, m) - 0.011).abs() < 1e-15);
        assert_eq!(eta_growth(0.01, 0.1, 150, 100, m), 0.01);
        assert_eq!(eta_growth(0.01, 0.1, 0, 100, m), 0.01);
        let mut eta = 0.01;
        for k in 0..1000 {
            eta = eta_growth(eta, 0.0, k, 100, m);
        }
        assert_eq!(eta, 0.01);
        assert!((eta_growth(0.01, 0.1, 200, 100, EtaGrowth::Additive) - 0.11).abs() < 1e-15);
    }

    #[test]
    fn freeze_zeroes_exact_fraction() {
        let mut params = vec![param(&[0.5, -0.01, 0.3, 0.02, -0.7, 0.1, 0.2])];
        let mut masks = MaskState::unselected(&params);
        freeze_masks(&mut masks, &mut params, 0.9).unwrap();
        assert_eq!(masks.layers[0].pruned_count(), 6);
        assert_eq!(sparsity_audit(&params, &masks).unwrap(), vec![6.0 / 7.0]);
        assert_eq!(freeze_masks(&mut masks, &mut params, 0.9), Err(PruneError::AlreadyFrozen));
        // a later update to a pruned slot is undone by re-applying the mask
        params[0].w.data_mut()[1] = 0.4;
        masks.apply(&mut params);
        assert_eq!(params[0].w.data()[1], 0.0);
    }

    #[test]
    fn freeze_with_zero_ratio_keeps_all() {
        let mut params = vec![param(&[0.5, -0.01])];
        let mut masks = MaskState::unselected(&params);
        freeze_masks(&mut masks, &mut params, 0.0).unwrap();
        assert_eq!(masks.values(0.95), vec![vec![1.0, 1.0]]);
        assert_eq!(params[0].w.data(), &[0.5, -0.01]);
    }

    #[test]
    fn mask_values_by_stage() {
        let l = LayerMask {
            n: 3,
            pruned: vec![1],
            tau: 0.0,
        };
        let mut m = MaskState {
            layers: vec![l],
            frozen: false,
        };
        assert_eq!(m.values(0.95), vec![vec![1.0, 0.95, 1.0]]);
        m.frozen = true;
        assert_eq!(m.values(0.95), vec![vec![1.0, 0.0, 1.0]]);
    }

    #[test]
    fn sparsity_audit_requires_freeze() {
        let params = vec![param(&[1.0])];
        assert_eq!(sparsity_audit(&params, &MaskState::unselected(&params)), Err(PruneError::NotFrozen));
    }

    #[test]
    fn scratch_mask_counts_and_seeding() {
        let w: Vec<f32> = (0..100).map(|i| i as f32 + 1.0).collect();
        let make = |seed| {
            let mut params = vec![param(&w)];
            let m = baseline_mask(Method::Scratch, &mut params, 0.9, &mut Rng::new(seed)).unwrap();
            (m, params)
        };
        let (m, p) = make(3);
        assert!(m.frozen);
        assert_eq!(p[0].w.data().iter().filter(|v| **v == 0.0).count(), 90);
        assert_eq!(make(3).0, m);
        assert_ne!(make(4).0, m);
    }

    #[test]
    fn l1_oneshot_mask() {
        let mut params = vec![param(&[0.3, -0.1, 0.5, 0.05])];
        let m = baseline_mask(Method::L1Oneshot, &mut params, 0.5, &mut Rng::new(0)).unwrap();
        assert_eq!(m.layers[0].pruned, vec![1, 3]);
        assert_eq!(params[0].w.data(), &[0.3, 0.0, 0.5, 0.0]);
        assert!(baseline_mask(Method::Iht, &mut params, 0.5, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn partition_change_counts() {
        // keep,keep,prune,prune -> keep,prune,keep,prune
        assert_eq!(partition_changes(&[2, 3], &[1, 3]), 2);
        assert_eq!(partition_changes(&[0, 1], &[0, 1]), 0);
        assert_eq!(partition_changes(&[], &[0, 1, 2, 3]), 4);
    }

    #[test]
    fn config_validation() {
        assert!(PruneConfig::default().validate().is_ok());
        for bad in [
            PruneConfig { alpha: 1.0, ..Default::default() },
            PruneConfig { alpha: 0.0, ..Default::default() },
            PruneConfig { r: 1.5, ..Default::default() },
            PruneConfig { k_eta: 0, ..Default::default() },
            PruneConfig { eta0: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!("l1_oneshot".parse::<Method>().unwrap(), Method::L1Oneshot);
        assert!("l2".parse::<Method>().is_err());
    }

    fn brute_force_select(w: &[f32], r: f64) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..w.len() as u32).collect();
        idx.sort_by(|&a, &b| w[a as usize].abs().total_cmp(&w[b as usize].abs()).then(a.cmp(&b)));
        let mut out = idx[..pruned_count(w.len(), r)].to_vec();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn selection_matches_sort_oracle(
            w in prop::collection::vec(prop_oneof![-1.0f32..1.0, Just(0.25f32), Just(-0.25f32)], 1..200),
            r in 0.0f64..=1.0,
        ) {
            let s = rank_select(&w, r).unwrap();
            prop_assert_eq!(s.pruned.len(), pruned_count(w.len(), r));
            prop_assert_eq!(&s.pruned, &brute_force_select(&w, r));
            let mut keep = vec![true; w.len()];
            s.pruned.iter().for_each(|&i| keep[i as usize] = false);
            for (i, &v) in w.iter().enumerate() {
                if keep[i] {
                    prop_assert!(v.abs() as f64 >= s.tau);
                } else if s.tau.is_finite() {
                    prop_assert!(v.abs() as f64 <= s.tau);
                }
            }
        }

        #[test]
        fn iht_is_idempotent(w in prop::collection::vec(-1.0f32..1.0, 1..100), r in 0.0f64..=1.0) {
            let mut a = w.clone();
            iht_step(&mut a, r).unwrap();
            let once = a.clone();
            iht_step(&mut a, r).unwrap();
            prop_assert_eq!(a, once);
        }

        #[test]
        fn partition_changes_symmetric(
            a in prop::collection::btree_set(0u32..50, 0..50),
            b in prop::collection::btree_set(0u32..50, 0..50),
        ) {
            let a: Vec<u32> = a.into_iter().collect();
            let b: Vec<u32> = b.into_iter().collect();
            let d = partition_changes(&a, &b);
            prop_assert_eq!(d, partition_changes(&b, &a));
            prop_assert_eq!(d == 0, a == b);
        }
    }
}
