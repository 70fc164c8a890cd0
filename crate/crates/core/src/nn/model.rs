use crate::rng::Rng;
use crate::tensor::{ConvGeometry, Scalar, Tensor, Workspace};

use super::layers::{
    conv2d_backward_batch, conv2d_forward_keep, linear_backward_batch, linear_forward_batch, mse_into,
    pixel_shuffle_into, pixel_unshuffle_into, relu_backward_into, relu_forward_into,
};
use super::{Arch, LayerKind, LayerSpec, ModelConfig, NnError, ParamTensor, Result};

/// A layer graph with its parameters. All layers run on `[B, ...]` batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<ParamTensor<T>>,
    /// `param_of[i]` is the index into `params` for layer `i`.
    param_of: Vec<Option<usize>>,
}

/// Activations kept for the backward pass.
pub struct ForwardTrace<T> {
    batch: usize,
    acts: Vec<Vec<T>>,
    shapes: Vec<Vec<usize>>,
    // per layer: im2col matrices of conv inputs, kept for backward
    cols: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> Tensor<T> {
        Tensor::from_vec(&self.output_shape(), self.output_data().to_vec()).expect("trace shapes are consistent")
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = vec![self.batch];
        shape.extend(self.shapes.last().unwrap());
        shape
    }

    pub fn output_data(&self) -> &[T] {
        self.acts.last().unwrap()
    }

    /// Hand every buffer back to `ws` for the next iteration.
    pub fn recycle(self, ws: &mut Workspace<T>) {
        for a in self.acts.into_iter().chain(self.cols.into_iter().flatten()) {
            ws.give(a);
        }
    }
}

fn conv(name: String, in_ch: usize, out_ch: usize) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Conv2d { in_ch, out_ch, kernel: 3, pad: 1 },
    }
}

fn plain(name: &str, kind: LayerKind) -> LayerSpec {
    LayerSpec { name: name.into(), kind }
}

/// Layer list for a configuration.
pub fn build_layers(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let (c, s) = (cfg.channels, cfg.scale);
    let mut layers = Vec::new();
    match cfg.arch {
        Arch::MiniEdsr => {
            layers.push(conv("head".into(), 3, c));
            for b in 0..cfg.n_blocks {
                let block_in = layers.len();
                layers.push(conv(format!("body{b}.conv1"), c, c));
                layers.push(plain("relu", LayerKind::Relu));
                layers.push(conv(format!("body{b}.conv2"), c, c));
                layers.push(plain("add", LayerKind::ResidualAdd { skip_from: block_in }));
            }
            layers.push(conv("body_end".into(), c, c));
            layers.push(plain("add", LayerKind::ResidualAdd { skip_from: 1 }));
            layers.push(conv("tail".into(), c, 3 * s * s));
            layers.push(plain("shuffle", LayerKind::PixelShuffle { scale: s }));
        }
        Arch::MiniMlp => {
            let p = cfg.mlp_patch;
            layers.push(plain("flatten", LayerKind::Reshape { dims: vec![3 * p * p] }));
            layers.push(LayerSpec {
                name: "fc_in".into(),
                kind: LayerKind::Linear { n_in: 3 * p * p, n_out: c },
            });
            layers.push(plain("relu", LayerKind::Relu));
            for b in 0..cfg.n_blocks {
                layers.push(LayerSpec {
                    name: format!("fc{b}"),
                    kind: LayerKind::Linear { n_in: c, n_out: c },
                });
                layers.push(plain("relu", LayerKind::Relu));
            }
            layers.push(LayerSpec {
                name: "fc_out".into(),
                kind: LayerKind::Linear { n_in: c, n_out: 3 * s * s * p * p },
            });
            layers.push(plain("unflatten", LayerKind::Reshape { dims: vec![3 * s * s, p, p] }));
            layers.push(plain("shuffle", LayerKind::PixelShuffle { scale: s }));
        }
    }
    layers
}

pub(crate) fn out_shape(kind: &LayerKind, input: &[usize]) -> Result<Vec<usize>> {
    let bad = |what: &str| NnError::ShapeMismatch(format!("{what}: input {input:?}"));
    match kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, pad } => {
            let [c, h, w] = input[..] else { return Err(bad("conv2d")) };
            if c != *in_ch {
                return Err(bad("conv2d channels"));
            }
            let (ho, wo) = ConvGeometry::square(*kernel, *pad).output_size(h, w)?;
            Ok(vec![*out_ch, ho, wo])
        }
        LayerKind::Linear { n_in, n_out } => {
            if input.iter().product::<usize>() != *n_in {
                return Err(bad("linear"));
            }
            Ok(vec![*n_out])
        }
        LayerKind::Relu | LayerKind::ResidualAdd { .. } => Ok(input.to_vec()),
        LayerKind::PixelShuffle { scale } => {
            let [c, h, w] = input[..] else { return Err(bad("pixel_shuffle")) };
            if c % (scale * scale) != 0 {
                return Err(bad("pixel_shuffle channels"));
            }
            Ok(vec![c / (scale * scale), h * scale, w * scale])
        }
        LayerKind::Reshape { dims } => {
            if dims.iter().product::<usize>() != input.iter().product::<usize>() {
                return Err(bad("reshape"));
            }
            Ok(dims.clone())
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>, ws: &mut Workspace<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            acc.iter_mut().zip(&g).for_each(|(a, &v)| *a = *a + v);
            ws.give(g);
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Build the layer graph and draw uniform weights with the configured
    /// fan-in bound; biases and Adam moments start at zero.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layers = build_layers(&config);
        let mut params = Vec::new();
        let mut param_of = Vec::with_capacity(layers.len());
        for layer in &layers {
            let Some(shape) = layer.weight_shape() else {
                param_of.push(None);
                continue;
            };
            let bound = config.init.bound(layer.fan_in().unwrap());
            let n = shape.iter().product();
            let w = rng.uniform::<T>(-bound, bound, n)?.reshape(&shape)?;
            let b = Tensor::zeros(&[shape[0]]);
            param_of.push(Some(params.len()));
            params.push(ParamTensor::new(w, Some(b)));
        }
        Ok(Self {
            config,
            layers,
            params,
            param_of,
        })
    }

    /// Reassemble a model from stored parameters; shapes are checked
    /// against the layer graph the config implies.
    pub fn from_params(config: ModelConfig, params: Vec<ParamTensor<T>>) -> Result<Self> {
        config.validate()?;
        let layers = build_layers(&config);
        let mut param_of = Vec::with_capacity(layers.len());
        let mut next = 0;
        for layer in &layers {
            match layer.weight_shape() {
                Some(shape) => {
                    let p = params
                        .get(next)
                        .ok_or_else(|| NnError::ShapeMismatch(format!("missing parameters for {}", layer.name)))?;
                    if p.w.shape() != shape {
                        return Err(NnError::ShapeMismatch(format!(
                            "{}: stored weight {:?}, expected {shape:?}",
                            layer.name,
                            p.w.shape()
                        )));
                    }
                    param_of.push(Some(next));
                    next += 1;
                }
                None => param_of.push(None),
            }
        }
        if next != params.len() {
            return Err(NnError::ShapeMismatch(format!("{} parameter tensors for {next} layers", params.len())));
        }
        Ok(Self {
            config,
            layers,
            params,
            param_of,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(ParamTensor::cast).collect(),
            param_of: self.param_of.clone(),
        }
    }

    /// Name of the layer owning parameter tensor `p`.
    pub fn param_name(&self, p: usize) -> &str {
        let i = self.param_of.iter().position(|&q| q == Some(p)).expect("parameter index in range");
        &self.layers[i].name
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.params.len()).map(|p| self.param_name(p).to_string()).collect()
    }

    /// Per-sample input shape the model accepts for an `h × w` LR image.
    pub fn input_shape(&self, h: usize, w: usize) -> Vec<usize> {
        vec![3, h, w]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, Vec<usize>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(NnError::ShapeMismatch(format!("expected B×3×H×W input, got {shape:?}")));
        }
        if self.config.arch == Arch::MiniMlp && (shape[2] != self.config.mlp_patch || shape[3] != self.config.mlp_patch) {
            return Err(NnError::ShapeMismatch(format!(
                "mini_mlp takes {0}×{0} patches, got {1}×{2}",
                self.config.mlp_patch, shape[2], shape[3]
            )));
        }
        Ok((shape[0], shape[1..].to_vec()))
    }

    /// Inference forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ws = Workspace::new();
        let trace = self.run(x, false, &mut ws)?;
        let mut shape = vec![trace.batch];
        shape.extend(&trace.shapes[0]);
        let out = trace.acts.into_iter().next().unwrap();
        Ok(Tensor::from_vec(&shape, out)?)
    }

    /// Forward pass that keeps what [`Model::backward`] needs.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.run(x, true, &mut Workspace::new())
    }

    pub fn forward_trace_in(&self, x: &Tensor<T>, ws: &mut Workspace<T>) -> Result<ForwardTrace<T>> {
        self.run(x, true, ws)
    }

    fn run(&self, x: &Tensor<T>, keep: bool, ws: &mut Workspace<T>) -> Result<ForwardTrace<T>> {
        let (batch, in_shape) = self.check_input(x)?;
        let mut input = ws.take(x.len());
        input.copy_from_slice(x.data());
        let mut acts = vec![input];
        let mut shapes = vec![in_shape];
        let mut cols: Vec<Option<Vec<T>>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            let inp = &acts[i];
            let ishape = &shapes[i];
            let oshape = out_shape(&layer.kind, ishape)?;
            let out = match &layer.kind {
                LayerKind::Conv2d { out_ch, kernel, pad, .. } => {
                    let p = &self.params[self.param_of[i].unwrap()];
                    let (y, c) = conv2d_forward_keep(
                        inp,
                        batch,
                        (ishape[0], ishape[1], ishape[2]),
                        p.w.data(),
                        p.b.as_ref().map(|b| b.data()),
                        *out_ch,
                        ConvGeometry::square(*kernel, *pad),
                        keep,
                        ws,
                    )?;
                    if keep {
                        cols[i] = Some(c);
                    } else {
                        ws.give(c);
                    }
                    y
                }
                LayerKind::Linear { n_in, n_out } => {
                    let p = &self.params[self.param_of[i].unwrap()];
                    linear_forward_batch(inp, batch, *n_in, p.w.data(), p.b.as_ref().map(|b| b.data()), *n_out, ws)
                }
                LayerKind::Relu => {
                    let mut y = ws.take(inp.len());
                    relu_forward_into(inp, &mut y);
                    y
                }
                LayerKind::PixelShuffle { scale } => {
                    let mut y = ws.take(inp.len());
                    pixel_shuffle_into(inp, batch, (ishape[0], ishape[1], ishape[2]), *scale, &mut y);
                    y
                }
                LayerKind::ResidualAdd { skip_from } => {
                    if shapes[*skip_from] != *ishape {
                        return Err(NnError::ShapeMismatch(format!("residual {:?} + {ishape:?}", shapes[*skip_from])));
                    }
                    let mut y = ws.take(inp.len());
                    for ((o, &a), &b) in y.iter_mut().zip(inp).zip(&acts[*skip_from]) {
                        *o = a + b;
                    }
                    y
                }
                LayerKind::Reshape { .. } => {
                    let mut y = ws.take(inp.len());
                    y.copy_from_slice(inp);
                    y
                }
            };
            acts.push(out);
            shapes.push(oshape);
            if !keep && !self.layers[i + 1..].iter().any(|l| matches!(l.kind, LayerKind::ResidualAdd { skip_from } if skip_from == i)) {
                // inference only needs activations a later skip still reads
                let dead = std::mem::take(&mut acts[i]);
                ws.give(dead);
            }
        }
        if !keep {
            let last = acts.pop().unwrap();
            acts = vec![last];
            let last_shape = shapes.pop().unwrap();
            shapes = vec![last_shape];
        }
        Ok(ForwardTrace { batch, acts, shapes, cols })
    }

    /// Backpropagate `grad_out` (shaped like the output) and overwrite every
    /// parameter's gradient.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, grad_out: &Tensor<T>) -> Result<()> {
        let mut ws = Workspace::new();
        let mut g = ws.take(grad_out.len());
        g.copy_from_slice(grad_out.data());
        self.backward_in(trace, g, &mut ws)
    }

    /// [`Model::backward`] with buffers from `ws`; `grad_out` is consumed.
    pub fn backward_in(&mut self, trace: &ForwardTrace<T>, grad_out: Vec<T>, ws: &mut Workspace<T>) -> Result<()> {
        if trace.acts.len() != self.layers.len() + 1 {
            return Err(NnError::ShapeMismatch("trace was recorded without backward buffers".into()));
        }
        if grad_out.len() != trace.acts.last().unwrap().len() {
            return Err(NnError::ShapeMismatch(format!("upstream gradient has {} elements", grad_out.len())));
        }
        for p in &mut self.params {
            p.zero_grad();
        }
        let batch = trace.batch;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; trace.acts.len()];
        grads[self.layers.len()] = Some(grad_out);
        for i in (0..self.layers.len()).rev() {
            let Some(gy) = grads[i + 1].take() else { continue };
            let need_gx = i > 0;
            let ishape = &trace.shapes[i];
            let gx = match &self.layers[i].kind {
                LayerKind::Conv2d { out_ch, kernel, pad, .. } => {
                    let p = &mut self.params[self.param_of[i].unwrap()];
                    conv2d_backward_batch(
                        &trace.acts[i],
                        &gy,
                        batch,
                        (ishape[0], ishape[1], ishape[2]),
                        p.w.data(),
                        *out_ch,
                        ConvGeometry::square(*kernel, *pad),
                        p.grad_w.data_mut(),
                        p.grad_b.as_mut().map(|g| g.data_mut()),
                        need_gx,
                        trace.cols[i].as_deref(),
                        ws,
                    )?
                }
                LayerKind::Linear { n_in, n_out } => {
                    let p = &mut self.params[self.param_of[i].unwrap()];
                    linear_backward_batch(
                        &trace.acts[i],
                        &gy,
                        batch,
                        *n_in,
                        p.w.data(),
                        *n_out,
                        p.grad_w.data_mut(),
                        p.grad_b.as_mut().map(|g| g.data_mut()),
                        need_gx,
                        ws,
                    )
                }
                LayerKind::Relu => {
                    let mut gx = ws.take(gy.len());
                    relu_backward_into(&trace.acts[i], &gy, &mut gx);
                    Some(gx)
                }
                LayerKind::PixelShuffle { scale } => {
                    let mut gx = ws.take(gy.len());
                    pixel_unshuffle_into(&gy, batch, (ishape[0], ishape[1], ishape[2]), *scale, &mut gx);
                    Some(gx)
                }
                LayerKind::ResidualAdd { skip_from } => {
                    let mut skip = ws.take(gy.len());
                    skip.copy_from_slice(&gy);
                    accumulate(&mut grads[*skip_from], skip, ws);
                    let mut gx = ws.take(gy.len());
                    gx.copy_from_slice(&gy);
                    Some(gx)
                }
                LayerKind::Reshape { .. } => {
                    let mut gx = ws.take(gy.len());
                    gx.copy_from_slice(&gy);
                    Some(gx)
                }
            };
            ws.give(gy);
            if let Some(gx) = gx {
                accumulate(&mut grads[i], gx, ws);
            }
        }
        for g in grads.into_iter().flatten() {
            ws.give(g);
        }
        Ok(())
    }

    /// MSE forward/backward over a batch; gradients land in `params`.
    pub fn forward_backward(&mut self, lr: &Tensor<T>, hr: &Tensor<T>) -> Result<T> {
        self.forward_backward_in(lr, hr, &mut Workspace::new())
    }

    pub fn forward_backward_in(&mut self, lr: &Tensor<T>, hr: &Tensor<T>, ws: &mut Workspace<T>) -> Result<T> {
        if lr.shape().len() != 4 || hr.shape().len() != 4 || lr.shape()[0] != hr.shape()[0] {
            return Err(NnError::ShapeMismatch(format!("batch {:?} vs {:?}", lr.shape(), hr.shape())));
        }
        let s = self.config.scale;
        if lr.shape()[2] * s != hr.shape()[2] || lr.shape()[3] * s != hr.shape()[3] {
            return Err(NnError::ShapeMismatch(format!(
                "HR {:?} is not {s}x LR {:?}",
                hr.shape(),
                lr.shape()
            )));
        }
        let trace = self.run(lr, true, ws)?;
        if trace.output_shape() != hr.shape() {
            return Err(NnError::ShapeMismatch(format!("output {:?} vs target {:?}", trace.output_shape(), hr.shape())));
        }
        let mut grad = ws.take(hr.len());
        let loss = mse_into(trace.output_data(), hr.data(), &mut grad);
        self.backward_in(&trace, grad, ws)?;
        trace.recycle(ws);
        Ok(loss)
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.w.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn cfg(arch: Arch, scale: usize) -> ModelConfig {
        ModelConfig {
            arch,
            n_blocks: 1,
            channels: 4,
            scale,
            mlp_patch: 3,
            init: Init::default(),
        }
    }

    #[test]
    fn inference_forward_equals_traced_forward() {
        for arch in [Arch::MiniEdsr, Arch::MiniMlp] {
            let mut c = cfg(arch, 2);
            c.n_blocks = 2;
            let model = Model::<f64>::new(c, &mut Rng::new(8)).unwrap();
            let x = Rng::new(9).uniform::<f64>(0.0, 1.0, 2 * 3 * 3 * 3).unwrap().reshape(&[2, 3, 3, 3]).unwrap();
            assert_eq!(model.forward(&x).unwrap(), model.forward_trace(&x).unwrap().output());
        }
    }

    #[test]
    fn edsr_layer_order() {
        let layers = build_layers(&ModelConfig::default());
        let names: Vec<_> = layers.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "head", "body0.conv1", "relu", "body0.conv2", "add", "body1.conv1", "relu", "body1.conv2", "add",
                "body_end", "add", "tail", "shuffle"
            ]
        );
        assert_eq!(layers[4].kind, LayerKind::ResidualAdd { skip_from: 1 });
        assert_eq!(layers[8].kind, LayerKind::ResidualAdd { skip_from: 5 });
        assert_eq!(layers[10].kind, LayerKind::ResidualAdd { skip_from: 1 });
        assert_eq!(layers.iter().filter(|l| l.prunable()).count(), 7);
    }

    #[test]
    fn output_is_scale_times_input() {
        for s in 2..=4 {
            let m = Model::<f32>::new(cfg(Arch::MiniEdsr, s), &mut Rng::new(0)).unwrap();
            let y = m.forward(&Tensor::zeros(&[2, 3, 5, 7])).unwrap();
            assert_eq!(y.shape(), &[2, 3, 5 * s, 7 * s]);
        }
        let m = Model::<f32>::new(cfg(Arch::MiniMlp, 2), &mut Rng::new(0)).unwrap();
        assert_eq!(m.forward(&Tensor::zeros(&[1, 3, 3, 3])).unwrap().shape(), &[1, 3, 6, 6]);
        assert!(m.forward(&Tensor::zeros(&[1, 3, 4, 4])).is_err());
    }

    #[test]
    fn init_bounds_and_determinism() {
        let a = Model::<f32>::new(ModelConfig::default(), &mut Rng::new(7)).unwrap();
        let b = Model::<f32>::new(ModelConfig::default(), &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        for (layer, p) in a.layers.iter().filter(|l| l.prunable()).zip(&a.params) {
            let bound = (6.0 / layer.fan_in().unwrap() as f64).sqrt() as f32;
            assert!(p.w.data().iter().all(|w| w.abs() <= bound));
            assert!(p.b.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
            assert!(p.adam_m.data().iter().chain(p.adam_v.data()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_mean_within_three_sigma() {
        // 10⁴ draws from U(-b, b): sigma of the mean is b / sqrt(3·10⁴)
        let c = ModelConfig {
            arch: Arch::MiniMlp,
            n_blocks: 0,
            channels: 10_000,
            scale: 2,
            mlp_patch: 1,
            init: Init::default(),
        };
        let m = Model::<f64>::new(c, &mut Rng::new(3)).unwrap();
        let w = m.params[0].w.data();
        assert_eq!(w.len(), 30_000);
        let first: Vec<f64> = w[..10_000].to_vec();
        let mean = first.iter().sum::<f64>() / 1e4;
        let b = (6.0f64 / 3.0).sqrt();
        assert!(mean.abs() < 3.0 * b / (3.0e4f64).sqrt());
    }

    #[test]
    fn degenerate_zero_pair_is_finite() {
        let mut m = Model::<f32>::new(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        let tail = m.params.len() - 1;
        m.params[tail].w.data_mut().fill(0.0);
        let lr = Tensor::zeros(&[1, 3, 4, 4]);
        let hr = Tensor::full(&[1, 3, 8, 8], 0.5);
        let loss = m.forward_backward(&lr, &hr).unwrap();
        assert!((loss - 0.25).abs() < 1e-7);
        for p in &m.params {
            assert!(p.grad_w.data().iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn forward_backward_is_bit_reproducible() {
        let mut rng = Rng::new(5);
        let lr = rng.uniform::<f32>(0.0, 1.0, 2 * 3 * 6 * 6).unwrap().reshape(&[2, 3, 6, 6]).unwrap();
        let hr = rng.uniform::<f32>(0.0, 1.0, 2 * 3 * 12 * 12).unwrap().reshape(&[2, 3, 12, 12]).unwrap();
        let run = || {
            let mut m = Model::<f32>::new(ModelConfig::default(), &mut Rng::new(2)).unwrap();
            let loss = m.forward_backward(&lr, &hr).unwrap();
            (loss.to_bits(), m.params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut rng = Rng::new(6);
        let m0 = Model::<f64>::new(cfg(Arch::MiniEdsr, 2), &mut rng).unwrap();
        let lr = rng.uniform::<f64>(0.0, 1.0, 2 * 3 * 4 * 4).unwrap().reshape(&[2, 3, 4, 4]).unwrap();
        let hr = rng.uniform::<f64>(0.0, 1.0, 2 * 3 * 8 * 8).unwrap().reshape(&[2, 3, 8, 8]).unwrap();
        let mut both = m0.clone();
        both.forward_backward(&lr, &hr).unwrap();
        let mut sum = vec![0.0; both.params[0].grad_w.len()];
        for b in 0..2 {
            let mut one = m0.clone();
            let l = Tensor::from_vec(&[1, 3, 4, 4], lr.data()[b * 48..(b + 1) * 48].to_vec()).unwrap();
            let h = Tensor::from_vec(&[1, 3, 8, 8], hr.data()[b * 192..(b + 1) * 192].to_vec()).unwrap();
            one.forward_backward(&l, &h).unwrap();
            sum.iter_mut().zip(one.params[0].grad_w.data()).for_each(|(s, g)| *s += g / 2.0);
        }
        for (a, b) in both.params[0].grad_w.data().iter().zip(&sum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_scale_mismatch() {
        let mut m = Model::<f32>::new(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        let err = m.forward_backward(&Tensor::zeros(&[1, 3, 4, 4]), &Tensor::zeros(&[1, 3, 9, 8]));
        assert!(matches!(err, Err(NnError::ShapeMismatch(_))));
    }
}
