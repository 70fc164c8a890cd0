use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::tensor::Scalar;

/// Adam hyperparameters plus the shared step counter and current learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(default)]
    pub t: u64,
    pub lr: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            lr: 2e-4,
        }
    }
}

impl AdamState {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(format!("betas must lie in (0,1): {} {}", self.beta1, self.beta2));
        }
        if self.eps <= 0.0 || !self.lr.is_finite() || self.lr < 0.0 {
            return Err(format!("bad eps {} or lr {}", self.eps, self.lr));
        }
        Ok(())
    }
}

/// Bias-corrected Adam update of one tensor using the counter already in `s`.
pub fn adam_update<T: Scalar>(p: &mut ParamTensor<T>, s: &AdamState) {
    debug_assert!(s.t >= 1, "adam_update before the first step");
    let bc1 = 1.0 - s.beta1.powi(s.t as i32);
    let bc2_sqrt = (1.0 - s.beta2.powi(s.t as i32)).sqrt();
    let consts = Consts {
        b1: T::from_f64(s.beta1),
        b2: T::from_f64(s.beta2),
        c1: T::from_f64(1.0 - s.beta1),
        c2: T::from_f64(1.0 - s.beta2),
        step: T::from_f64(s.lr / bc1),
        bc2_sqrt: T::from_f64(bc2_sqrt),
        eps: T::from_f64(s.eps),
    };
    update(p.w.data_mut(), p.grad_w.data(), p.adam_m.data_mut(), p.adam_v.data_mut(), &consts);
    if let (Some(b), Some(g), Some(m), Some(v)) = (p.b.as_mut(), p.grad_b.as_ref(), p.adam_m_b.as_mut(), p.adam_v_b.as_mut()) {
        update(b.data_mut(), g.data(), m.data_mut(), v.data_mut(), &consts);
    }
}

/// One Adam step on a single parameter tensor; advances `s.t`.
pub fn adam_step<T: Scalar>(p: &mut ParamTensor<T>, s: &mut AdamState) {
    s.t += 1;
    adam_update(p, s);
}

/// One Adam step over a whole parameter store; `s.t` advances once.
pub fn adam_step_all<T: Scalar>(params: &mut [ParamTensor<T>], s: &mut AdamState) {
    s.t += 1;
    for p in params {
        adam_update(p, s);
    }
}

struct Consts<T> {
    b1: T,
    b2: T,
    c1: T,
    c2: T,
    step: T,
    bc2_sqrt: T,
    eps: T,
}

fn update<T: Scalar>(w: &mut [T], g: &[T], m: &mut [T], v: &mut [T], c: &Consts<T>) {
    for i in 0..w.len() {
        m[i] = c.b1 * m[i] + c.c1 * g[i];
        v[i] = c.b2 * v[i] + c.c2 * g[i] * g[i];
        let denom = v[i].sqrt() / c.bc2_sqrt + c.eps;
        w[i] = w[i] - c.step * m[i] / denom;
    }
}

/// Step decay: `lr0 · 0.5^floor(k / half_every)`.
pub fn lr_schedule(k: u64, lr0: f64, half_every: u64) -> f64 {
    assert!(half_every >= 1, "half_every must be at least 1");
    lr0 * 0.5f64.powi((k / half_every) as i32)
}
