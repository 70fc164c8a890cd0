//! Central finite-difference checks of every layer's backward pass and of
//! full-model gradients, all in `f64`.
//!
//! Layer checks project the output onto a fixed random tensor `r`, so the
//! scalar objective is `<f(x), r>` and its gradient with respect to the
//! output is `r`.

use serde::Serialize;

use crate::nn::{
    conv2d, conv2d_backward, linear, linear_backward, mse_loss, pixel_shuffle, pixel_unshuffle, Arch, Model, ModelConfig,
    NnError, ParamTensor,
};
use crate::nn::layers::{relu_backward, relu_forward};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Per-layer bound on the relative error.
pub const LAYER_TOL: f64 = 1e-4;
/// Bound for whole-model spot checks.
pub const MODEL_TOL: f64 = 1e-3;
/// Bound for the loss gradient.
pub const LOSS_TOL: f64 = 1e-6;
/// Floor of the relative-error denominator, so entries whose true gradient
/// is zero are judged on absolute error.
pub const DENOM_FLOOR: f64 = 1e-6;

/// Deliberate corruption of an analytic gradient, to prove the checks bite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Scale the convolution weight gradient by 1.01.
    ConvBackward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// Check with the largest error relative to its tolerance.
    pub fn worst(&self) -> &CheckResult {
        self.checks
            .iter()
            .max_by(|a, b| (a.max_rel_err / a.tolerance).total_cmp(&(b.max_rel_err / b.tolerance)))
            .expect("at least one check")
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut v = x.to_vec();
    v[i] = x[i] + STEP;
    let up = f(&v);
    v[i] = x[i] - STEP;
    let down = f(&v);
    (up - down) / (2.0 * STEP)
}

fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| central_diff(f, x, i)).collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rand(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    rng.uniform(-1.0, 1.0, shape.iter().product()).unwrap().reshape(shape).unwrap()
}

fn tensor(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, v.to_vec()).expect("shape matches")
}

struct Acc {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    entries: usize,
}

impl Acc {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            worst: 0.0,
            entries: 0,
        }
    }

    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.worst = self.worst.max(max_rel_err(analytic, numeric));
        self.entries += analytic.len();
    }

    fn done(self) -> CheckResult {
        CheckResult {
            name: self.name.into(),
            max_rel_err: self.worst,
            tolerance: self.tolerance,
            entries: self.entries,
        }
    }
}

/// Convolution on a 2×4×4 input at stride 1 and a 2×5×5 input at stride 2.
pub fn check_conv2d(rng: &mut Rng, fault: Fault) -> Result<CheckResult, NnError> {
    let mut acc = Acc::new("conv2d", LAYER_TOL);
    for (side, stride) in [(4, 1), (5, 2)] {
        let pad = 1;
        let x = rand(rng, &[2, side, side]);
        let p = ParamTensor::new(rand(rng, &[3, 2, 3, 3]), Some(rand(rng, &[3])));
        let r = rand(rng, conv2d(&x, &p, pad, stride)?.shape());
        let mut g = conv2d_backward(&x, &p, pad, stride, &r)?;
        if fault == Fault::ConvBackward {
            g.grad_w = g.grad_w.map(|v| v * 1.01);
        }
        let fx = |v: &[f64]| dot(&conv2d(&tensor(x.shape(), v), &p, pad, stride).unwrap(), &r);
        acc.add(g.grad_x.data(), &numeric_grad(&fx, x.data()));
        let fw = |v: &[f64]| dot(&conv2d(&x, &ParamTensor::new(tensor(p.w.shape(), v), p.b.clone()), pad, stride).unwrap(), &r);
        acc.add(g.grad_w.data(), &numeric_grad(&fw, p.w.data()));
        let b = p.b.as_ref().unwrap();
        let fb = |v: &[f64]| dot(&conv2d(&x, &ParamTensor::new(p.w.clone(), Some(tensor(&[3], v))), pad, stride).unwrap(), &r);
        acc.add(g.grad_b.unwrap().data(), &numeric_grad(&fb, b.data()));
    }
    Ok(acc.done())
}

pub fn check_linear(rng: &mut Rng) -> Result<CheckResult, NnError> {
    let mut acc = Acc::new("linear", LAYER_TOL);
    let x = rand(rng, &[6]);
    let p = ParamTensor::new(rand(rng, &[4, 6]), Some(rand(rng, &[4])));
    let r = rand(rng, &[4]);
    let g = linear_backward(&x, &p, &r)?;
    let fx = |v: &[f64]| dot(&linear(&tensor(&[6], v), &p).unwrap(), &r);
    acc.add(g.grad_x.data(), &numeric_grad(&fx, x.data()));
    let fw = |v: &[f64]| dot(&linear(&x, &ParamTensor::new(tensor(&[4, 6], v), p.b.clone())).unwrap(), &r);
    acc.add(g.grad_w.data(), &numeric_grad(&fw, p.w.data()));
    let fb = |v: &[f64]| dot(&linear(&x, &ParamTensor::new(p.w.clone(), Some(tensor(&[4], v)))).unwrap(), &r);
    acc.add(g.grad_b.unwrap().data(), &numeric_grad(&fb, p.b.as_ref().unwrap().data()));
    Ok(acc.done())
}

/// Inputs are kept at least 0.1 away from the kink.
pub fn check_relu(rng: &mut Rng) -> CheckResult {
    let mut acc = Acc::new("relu", LAYER_TOL);
    let x: Vec<f64> = (0..16)
        .map(|_| {
            let v = rng.next_f64() * 0.9 + 0.1;
            if rng.next_f64() < 0.5 { -v } else { v }
        })
        .collect();
    let r: Vec<f64> = (0..16).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    let f = |v: &[f64]| relu_forward(v).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    acc.add(&relu_backward(&x, &r), &numeric_grad(&f, &x));
    acc.done()
}

pub fn check_pixel_shuffle(rng: &mut Rng) -> Result<CheckResult, NnError> {
    let mut acc = Acc::new("pixel_shuffle", LAYER_TOL);
    let x = rand(rng, &[8, 2, 3]);
    let r = rand(rng, &[2, 4, 6]);
    let analytic = pixel_unshuffle(&r, 2)?;
    let f = |v: &[f64]| dot(&pixel_shuffle(&tensor(&[8, 2, 3], v), 2).unwrap(), &r);
    acc.add(analytic.data(), &numeric_grad(&f, x.data()));
    Ok(acc.done())
}

pub fn check_mse(rng: &mut Rng) -> Result<CheckResult, NnError> {
    let mut acc = Acc::new("mse_loss", LOSS_TOL);
    let pred = rand(rng, &[3, 4]);
    let target = rand(rng, &[3, 4]);
    let (_, grad) = mse_loss(&pred, &target)?;
    let f = |v: &[f64]| mse_loss(&tensor(&[3, 4], v), &target).unwrap().0;
    acc.add(grad.data(), &numeric_grad(&f, pred.data()));
    Ok(acc.done())
}

/// Spot check of `spots` random weight entries (biases included) of a
/// freshly initialized model on a random batch.
pub fn check_model(name: &'static str, config: ModelConfig, spots: usize, rng: &mut Rng) -> Result<CheckResult, NnError> {
    let mut model = Model::<f64>::new(config, rng)?;
    // nonzero biases so their gradients are exercised away from init
    for p in &mut model.params {
        if let Some(b) = &mut p.b {
            *b = rand(rng, b.shape());
        }
    }
    let side = if model.config.arch == Arch::MiniMlp { model.config.mlp_patch } else { 4 };
    let s = model.config.scale;
    let lr = rng.uniform(0.0, 1.0, 2 * 3 * side * side)?.reshape(&[2, 3, side, side])?;
    let hr = rng.uniform(0.0, 1.0, 2 * 3 * side * s * side * s)?.reshape(&[2, 3, side * s, side * s])?;
    model.forward_backward(&lr, &hr)?;

    let mut acc = Acc::new(name, MODEL_TOL);
    let n_params = model.params.len();
    for _ in 0..spots {
        let p = rng.below(n_params as u64) as usize;
        let use_bias = model.params[p].b.is_some() && rng.next_f64() < 0.25;
        let (len, analytic) = if use_bias {
            let g = model.params[p].grad_b.as_ref().unwrap();
            let i = rng.below(g.len() as u64) as usize;
            (i, g.data()[i])
        } else {
            let g = &model.params[p].grad_w;
            let i = rng.below(g.len() as u64) as usize;
            (i, g.data()[i])
        };
        let loss_at = |delta: f64| -> f64 {
            let mut m = model.clone();
            let t = if use_bias { m.params[p].b.as_mut().unwrap() } else { &mut m.params[p].w };
            t.data_mut()[len] += delta;
            let y = m.forward(&lr).unwrap();
            mse_loss(&y, &hr).unwrap().0
        };
        let numeric = (loss_at(STEP) - loss_at(-STEP)) / (2.0 * STEP);
        acc.add(&[analytic], &[numeric]);
    }
    Ok(acc.done())
}

/// Every layer check plus full-model spot checks of both architectures.
pub fn run_gradcheck(seed: u64, fault: Fault) -> Result<GradcheckReport, NnError> {
    let mut rng = Rng::new(seed);
    let edsr = ModelConfig {
        arch: Arch::MiniEdsr,
        n_blocks: 2,
        channels: 4,
        scale: 2,
        ..ModelConfig::default()
    };
    let mlp = ModelConfig {
        arch: Arch::MiniMlp,
        n_blocks: 1,
        channels: 6,
        scale: 2,
        mlp_patch: 3,
        ..ModelConfig::default()
    };
    Ok(GradcheckReport {
        checks: vec![
            check_conv2d(&mut rng, fault)?,
            check_linear(&mut rng)?,
            check_relu(&mut rng),
            check_pixel_shuffle(&mut rng)?,
            check_mse(&mut rng)?,
            check_model("mini_edsr", edsr, 10, &mut rng)?,
            check_model("mini_mlp", mlp, 10, &mut rng)?,
        ],
    })
}
