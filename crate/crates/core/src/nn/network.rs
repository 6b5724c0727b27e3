use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::layer::{LayerSpec, SampleShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

/// Layer stack plus its declared input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: SampleShape,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input: SampleShape, layers: Vec<LayerSpec>) -> Self {
        Architecture { input, layers }
    }

    /// Fully connected network with `hidden` activation after each hidden layer
    /// and a linear output.
    pub fn fcn(inputs: usize, hidden: &[usize], outputs: usize, activation: LayerSpec) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::dense(h));
            layers.push(activation.clone());
        }
        layers.push(LayerSpec::dense(outputs));
        Architecture::new(SampleShape::Flat(inputs), layers)
    }

    /// Shapes after each layer; `shapes[0]` is the input.
    pub fn shapes(&self) -> Result<Vec<SampleShape>> {
        let mut shapes = vec![self.input];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(*shapes.last().unwrap())
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<SampleShape> {
        Ok(*self.shapes()?.last().unwrap())
    }

    pub fn is_dense_only(&self) -> bool {
        self.layers
            .iter()
            .all(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Tanh | LayerSpec::Relu))
    }
}

/// Trainable parameters and batch-norm running statistics, flattened.
///
/// Per layer, trainable values are stored as `weight` then `bias`
/// (conv: `[filters, in_channels, kernel]`, dense: `[units, inputs]`) or
/// `gamma` then `beta` for batch norm. `running` holds each batch-norm layer's
/// mean then variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub values: Vec<f64>,
    pub running: Vec<f64>,
}

impl NetworkParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub layer: usize,
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Batch statistics in batch norm; dropout masks drawn from `seed`.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone)]
struct LayerPlan {
    spec: LayerSpec,
    input: SampleShape,
    output: SampleShape,
    params: Range<usize>,
    state: Range<usize>,
}

#[derive(Debug)]
enum LayerAux {
    None,
    Pool(Vec<u32>),
    Mask(Vec<f64>),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
}

/// Activations of a single forward pass; consumed by [`Network::backward`].
#[derive(Debug)]
pub struct ForwardCache {
    mode: Mode,
    batch: usize,
    param_len: usize,
    acts: Vec<Vec<f64>>,
    aux: Vec<LayerAux>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch mean and (biased) variance seen by batch-norm layer `layer`.
    pub fn batch_statistics(&self, layer: usize) -> Option<(&[f64], &[f64])> {
        match self.aux.get(layer)? {
            LayerAux::Norm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Normalized activations (before gamma/beta) of batch-norm layer `layer`.
    pub fn normalized(&self, layer: usize) -> Option<&[f64]> {
        match self.aux.get(layer)? {
            LayerAux::Norm { xhat, .. } => Some(xhat),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// A sequential network: architecture, resolved layout and parameters.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    plan: Vec<LayerPlan>,
    params: NetworkParams,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

fn layout(arch: &Architecture) -> Result<(Vec<LayerPlan>, usize, usize)> {
    let shapes = arch.shapes()?;
    let (mut p, mut s) = (0, 0);
    let mut plan = Vec::with_capacity(arch.layers.len());
    for (i, spec) in arch.layers.iter().enumerate() {
        let pc = spec.param_count(shapes[i]);
        let sc = spec.state_count(shapes[i]);
        plan.push(LayerPlan {
            spec: spec.clone(),
            input: shapes[i],
            output: shapes[i + 1],
            params: p..p + pc,
            state: s..s + sc,
        });
        p += pc;
        s += sc;
    }
    Ok((plan, p, s))
}

impl Network {
    /// Build with seeded initialization: weights uniform in
    /// `±1/sqrt(fan_in)`, biases 0, batch norm gamma 1 / beta 0.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let (plan, n_params, n_state) = layout(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; n_params];
        let mut running = vec![0.0; n_state];
        for lp in &plan {
            match lp.spec {
                LayerSpec::Conv1d { filters, kernel, .. } => {
                    let fan_in = lp.input.channels() * kernel;
                    let limit = 1.0 / (fan_in as f64).sqrt();
                    let nw = filters * fan_in;
                    for v in &mut values[lp.params.start..lp.params.start + nw] {
                        *v = rng.random_range(-limit..limit);
                    }
                }
                LayerSpec::Dense { units } => {
                    let fan_in = lp.input.size();
                    let limit = 1.0 / (fan_in as f64).sqrt();
                    for v in &mut values[lp.params.start..lp.params.start + units * fan_in] {
                        *v = rng.random_range(-limit..limit);
                    }
                }
                LayerSpec::BatchNorm => {
                    let c = lp.input.channels();
                    values[lp.params.start..lp.params.start + c].fill(1.0);
                    running[lp.state.start + c..lp.state.end].fill(1.0);
                }
                _ => {}
            }
        }
        Ok(Network {
            arch,
            plan,
            params: NetworkParams { values, running },
        })
    }

    pub fn from_parts(arch: Architecture, params: NetworkParams) -> Result<Self> {
        let (plan, n_params, n_state) = layout(&arch)?;
        if params.values.len() != n_params || params.running.len() != n_state {
            return Err(Error::Shape(format!(
                "architecture needs {n_params} parameters and {n_state} running statistics, got {} and {}",
                params.values.len(),
                params.running.len()
            )));
        }
        if params.values.iter().chain(&params.running).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let net = Network { arch, plan, params };
        for lp in &net.plan {
            if matches!(lp.spec, LayerSpec::BatchNorm) {
                let c = lp.input.channels();
                if net.params.running[lp.state.start + c..lp.state.end]
                    .iter()
                    .any(|&v| v <= 0.0)
                {
                    return Err(Error::Data("batch-norm running variance must be positive".into()));
                }
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values.len()
    }

    pub fn trainable(&self) -> &[f64] {
        &self.params.values
    }

    pub fn set_trainable(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.values.len(),
                values.len()
            )));
        }
        self.params.values.copy_from_slice(values);
        Ok(())
    }

    pub fn input_shape(&self) -> SampleShape {
        self.arch.input
    }

    pub fn output_shape(&self) -> SampleShape {
        self.plan.last().map(|l| l.output).unwrap_or(self.arch.input)
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        for (i, lp) in self.plan.iter().enumerate() {
            let s = lp.params.start;
            match lp.spec {
                LayerSpec::Conv1d { filters, kernel, .. } => {
                    let nw = filters * lp.input.channels() * kernel;
                    out.push(ParamBlock {
                        layer: i,
                        name: "weight",
                        shape: vec![filters, lp.input.channels(), kernel],
                        range: s..s + nw,
                    });
                    out.push(ParamBlock {
                        layer: i,
                        name: "bias",
                        shape: vec![filters],
                        range: s + nw..lp.params.end,
                    });
                }
                LayerSpec::Dense { units } => {
                    let nw = units * lp.input.size();
                    out.push(ParamBlock {
                        layer: i,
                        name: "weight",
                        shape: vec![units, lp.input.size()],
                        range: s..s + nw,
                    });
                    out.push(ParamBlock {
                        layer: i,
                        name: "bias",
                        shape: vec![units],
                        range: s + nw..lp.params.end,
                    });
                }
                LayerSpec::BatchNorm => {
                    let c = lp.input.channels();
                    out.push(ParamBlock {
                        layer: i,
                        name: "gamma",
                        shape: vec![c],
                        range: s..s + c,
                    });
                    out.push(ParamBlock {
                        layer: i,
                        name: "beta",
                        shape: vec![c],
                        range: s + c..lp.params.end,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// `true` for conv/dense weight entries (the ones L2 regularization touches).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.param_count()];
        for b in self.blocks().into_iter().filter(|b| b.name == "weight") {
            mask[b.range].fill(true);
        }
        mask
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let dims = self.arch.input.dims();
        let shape = input.shape();
        if shape.len() != dims.len() + 1 || shape[1..] != dims[..] {
            return Err(Error::Shape(format!(
                "network expects input [batch, {}], got {:?}",
                dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                shape
            )));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(shape[0])
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let batch = self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.plan.len() + 1);
        let mut aux = Vec::with_capacity(self.plan.len());
        acts.push(input.values().to_vec());
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Infer => None,
        };
        for lp in &self.plan {
            let x = acts.last().unwrap();
            let (y, a) = self.layer_forward(lp, x, batch, mode, rng.as_mut());
            acts.push(y);
            aux.push(a);
        }
        let mut shape = vec![batch];
        shape.extend(self.output_shape().dims());
        let out = Tensor::new(shape, acts.last().unwrap().clone())?;
        if !out.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((
            out,
            ForwardCache {
                mode,
                batch,
                param_len: self.param_count(),
                acts,
                aux,
            },
        ))
    }

    /// Inference-mode forward pass, chunked to bound activation memory.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 32;
        let batch = self.check_input(input)?;
        if batch <= CHUNK {
            return Ok(self.forward(input, Mode::Infer)?.0);
        }
        let w = input.row_len();
        let out_w = self.output_shape().size();
        let mut values = Vec::with_capacity(batch * out_w);
        for start in (0..batch).step_by(CHUNK) {
            let end = (start + CHUNK).min(batch);
            let mut shape = input.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, input.values()[start * w..end * w].to_vec())?;
            values.extend(self.forward(&chunk, Mode::Infer)?.0.into_values());
        }
        let mut shape = vec![batch];
        shape.extend(self.output_shape().dims());
        Tensor::new(shape, values)
    }

    fn layer_forward(
        &self,
        lp: &LayerPlan,
        x: &[f64],
        batch: usize,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, LayerAux) {
        let p = &self.params.values[lp.params.clone()];
        let (in_sz, out_sz) = (lp.input.size(), lp.output.size());
        let mut y = vec![0.0; batch * out_sz];
        match lp.spec {
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let g = ConvGeom {
                    in_channels: lp.input.channels(),
                    in_len: lp.input.length(),
                    out_channels: filters,
                    kernel,
                    stride,
                    padding,
                };
                let nw = filters * g.in_channels * kernel;
                for (xs, ys) in x.chunks(in_sz).zip(y.chunks_mut(out_sz)) {
                    kernels::conv_forward(&g, xs, &p[..nw], &p[nw..], ys);
                }
                (y, LayerAux::None)
            }
            LayerSpec::Dense { units } => {
                let nw = units * in_sz;
                for (xs, ys) in x.chunks(in_sz).zip(y.chunks_mut(out_sz)) {
                    kernels::dense_forward(xs, &p[..nw], &p[nw..], ys);
                }
                (y, LayerAux::None)
            }
            LayerSpec::Relu => {
                for (yv, &xv) in y.iter_mut().zip(x) {
                    *yv = xv.max(0.0);
                }
                (y, LayerAux::None)
            }
            LayerSpec::Tanh => {
                for (yv, &xv) in y.iter_mut().zip(x) {
                    *yv = xv.tanh();
                }
                (y, LayerAux::None)
            }
            LayerSpec::Softmax => {
                for (xs, ys) in x.chunks(in_sz).zip(y.chunks_mut(out_sz)) {
                    softmax_into(xs, ys);
                }
                (y, LayerAux::None)
            }
            LayerSpec::MaxPool1d { width } => {
                let (c, len, ol) = (lp.input.channels(), lp.input.length(), lp.output.length());
                let mut idx = vec![0u32; batch * out_sz];
                for n in 0..batch {
                    for ch in 0..c {
                        let src = &x[n * in_sz + ch * len..n * in_sz + (ch + 1) * len];
                        for t in 0..ol {
                            let win = &src[t * width..(t + 1) * width];
                            let mut best = 0;
                            for (j, &v) in win.iter().enumerate() {
                                if v > win[best] {
                                    best = j;
                                }
                            }
                            let o = n * out_sz + ch * ol + t;
                            y[o] = win[best];
                            idx[o] = (n * in_sz + ch * len + t * width + best) as u32;
                        }
                    }
                }
                (y, LayerAux::Pool(idx))
            }
            LayerSpec::Dropout { p: drop } => match (mode, rng) {
                (Mode::Train { .. }, Some(rng)) if drop > 0.0 => {
                    let keep = 1.0 / (1.0 - drop);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < drop { 0.0 } else { keep })
                        .collect();
                    for ((yv, &xv), &m) in y.iter_mut().zip(x).zip(&mask) {
                        *yv = xv * m;
                    }
                    (y, LayerAux::Mask(mask))
                }
                _ => {
                    y.copy_from_slice(x);
                    (y, LayerAux::None)
                }
            },
            LayerSpec::BatchNorm => {
                let (c, len) = (lp.input.channels(), lp.input.length());
                let (gamma, beta) = p.split_at(c);
                let at = |n: usize, ch: usize| n * in_sz + ch * len;
                match mode {
                    Mode::Train { .. } => {
                        let m = (batch * len) as f64;
                        let mut mean = vec![0.0; c];
                        let mut var = vec![0.0; c];
                        let mut inv_std = vec![0.0; c];
                        let mut xhat = vec![0.0; x.len()];
                        for ch in 0..c {
                            let mut s = 0.0;
                            for n in 0..batch {
                                s += x[at(n, ch)..at(n, ch) + len].iter().sum::<f64>();
                            }
                            let mu = s / m;
                            let mut ss = 0.0;
                            for n in 0..batch {
                                ss += x[at(n, ch)..at(n, ch) + len]
                                    .iter()
                                    .map(|v| (v - mu) * (v - mu))
                                    .sum::<f64>();
                            }
                            let v = ss / m;
                            let is = 1.0 / (v + BATCH_NORM_EPS).sqrt();
                            mean[ch] = mu;
                            var[ch] = v;
                            inv_std[ch] = is;
                            for n in 0..batch {
                                let r = at(n, ch)..at(n, ch) + len;
                                for j in r {
                                    let xh = (x[j] - mu) * is;
                                    xhat[j] = xh;
                                    y[j] = gamma[ch] * xh + beta[ch];
                                }
                            }
                        }
                        (
                            y,
                            LayerAux::Norm {
                                xhat,
                                inv_std,
                                mean,
                                var,
                            },
                        )
                    }
                    Mode::Infer => {
                        let st = &self.params.running[lp.state.clone()];
                        let (rmean, rvar) = st.split_at(c);
                        for ch in 0..c {
                            let is = 1.0 / (rvar[ch] + BATCH_NORM_EPS).sqrt();
                            for n in 0..batch {
                                for j in at(n, ch)..at(n, ch) + len {
                                    y[j] = gamma[ch] * (x[j] - rmean[ch]) * is + beta[ch];
                                }
                            }
                        }
                        (y, LayerAux::None)
                    }
                }
            }
        }
    }

    /// Replace every batch norm layer's running statistics with the mean and
    /// unbiased variance of its input over all of `input`, layer by layer in
    /// inference mode so each layer sees the already-updated earlier ones.
    pub fn set_population_stats(&mut self, input: &Tensor) -> Result<()> {
        const CHUNK: usize = 32;
        let batch = self.check_input(input)?;
        let w = input.row_len();
        let bn_layers: Vec<usize> = (0..self.plan.len())
            .filter(|&i| self.plan[i].spec == LayerSpec::BatchNorm)
            .collect();
        for li in bn_layers {
            let (c, len) = (self.plan[li].input.channels(), self.plan[li].input.length());
            let in_sz = self.plan[li].input.size();
            // Chunk-wise mean and sum of squared deviations, merged pairwise.
            let mut count = 0.0;
            let mut mean = vec![0.0; c];
            let mut m2 = vec![0.0; c];
            for start in (0..batch).step_by(CHUNK) {
                let end = (start + CHUNK).min(batch);
                let mut x = input.values()[start * w..end * w].to_vec();
                for lp in &self.plan[..li] {
                    x = self.layer_forward(lp, &x, end - start, Mode::Infer, None).0;
                }
                let nb = ((end - start) * len) as f64;
                for ch in 0..c {
                    let vals =
                        || (0..end - start).flat_map(|n| x[n * in_sz + ch * len..n * in_sz + (ch + 1) * len].iter());
                    let mb = vals().sum::<f64>() / nb;
                    let m2b = vals().map(|v| (v - mb) * (v - mb)).sum::<f64>();
                    let total = count + nb;
                    let delta = mb - mean[ch];
                    mean[ch] += delta * nb / total;
                    m2[ch] += m2b + delta * delta * count * nb / total;
                }
                count += nb;
            }
            let st = &mut self.params.running[self.plan[li].state.clone()];
            let (rmean, rvar) = st.split_at_mut(c);
            for ch in 0..c {
                rmean[ch] = mean[ch];
                rvar[ch] = if count > 1.0 { m2[ch] / (count - 1.0) } else { 1.0 };
            }
        }
        Ok(())
    }

    /// Fold a train-mode pass's batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, cache: &ForwardCache) {
        for (lp, aux) in self.plan.iter().zip(&cache.aux) {
            if let LayerAux::Norm { mean, var, .. } = aux {
                let c = lp.input.channels();
                let m = (cache.batch * lp.input.length()) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                let st = &mut self.params.running[lp.state.clone()];
                let (rmean, rvar) = st.split_at_mut(c);
                for ch in 0..c {
                    rmean[ch] = BATCH_NORM_MOMENTUM * rmean[ch] + (1.0 - BATCH_NORM_MOMENTUM) * mean[ch];
                    rvar[ch] = BATCH_NORM_MOMENTUM * rvar[ch] + (1.0 - BATCH_NORM_MOMENTUM) * var[ch] * unbias;
                }
            }
        }
    }

    /// Back-propagate `grad_output` (dLoss/dOutput) through the pass recorded in `cache`.
    pub fn backward(&self, cache: ForwardCache, grad_output: &Tensor) -> Result<Gradients> {
        if cache.param_len != self.param_count() || cache.aux.len() != self.plan.len() {
            return Err(Error::Shape("forward cache was produced by a different network".into()));
        }
        let expected = cache.batch * self.output_shape().size();
        if grad_output.len() != expected || grad_output.batch_size() != cache.batch {
            return Err(Error::Shape(format!(
                "loss gradient has shape {:?}, network output has {} values per sample",
                grad_output.shape(),
                self.output_shape().size()
            )));
        }
        let batch = cache.batch;
        let mut grads = vec![0.0; self.param_count()];
        let mut g = grad_output.values().to_vec();
        let ForwardCache { acts, aux, .. } = cache;
        for (i, lp) in self.plan.iter().enumerate().rev() {
            g = self.layer_backward(
                lp,
                &acts[i],
                &acts[i + 1],
                &aux[i],
                &g,
                batch,
                &mut grads[lp.params.clone()],
            );
        }
        if grads.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        lp: &LayerPlan,
        x: &[f64],
        y: &[f64],
        aux: &LayerAux,
        gy: &[f64],
        batch: usize,
        gp: &mut [f64],
    ) -> Vec<f64> {
        let p = &self.params.values[lp.params.clone()];
        let (in_sz, out_sz) = (lp.input.size(), lp.output.size());
        let mut gx = vec![0.0; batch * in_sz];
        match lp.spec {
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let g = ConvGeom {
                    in_channels: lp.input.channels(),
                    in_len: lp.input.length(),
                    out_channels: filters,
                    kernel,
                    stride,
                    padding,
                };
                let nw = filters * g.in_channels * kernel;
                let (gw, gb) = gp.split_at_mut(nw);
                for n in 0..batch {
                    kernels::conv_backward(
                        &g,
                        &x[n * in_sz..(n + 1) * in_sz],
                        &p[..nw],
                        &gy[n * out_sz..(n + 1) * out_sz],
                        gw,
                        gb,
                        &mut gx[n * in_sz..(n + 1) * in_sz],
                    );
                }
            }
            LayerSpec::Dense { units } => {
                let nw = units * in_sz;
                let (gw, gb) = gp.split_at_mut(nw);
                for n in 0..batch {
                    kernels::dense_backward(
                        &x[n * in_sz..(n + 1) * in_sz],
                        &p[..nw],
                        &gy[n * out_sz..(n + 1) * out_sz],
                        gw,
                        gb,
                        &mut gx[n * in_sz..(n + 1) * in_sz],
                    );
                }
            }
            LayerSpec::Relu => {
                for ((d, &xv), &g) in gx.iter_mut().zip(x).zip(gy) {
                    *d = if xv > 0.0 { g } else { 0.0 };
                }
            }
            LayerSpec::Tanh => {
                for ((d, &yv), &g) in gx.iter_mut().zip(y).zip(gy) {
                    *d = g * (1.0 - yv * yv);
                }
            }
            LayerSpec::Softmax => {
                for n in 0..batch {
                    let r = n * out_sz..(n + 1) * out_sz;
                    let (ys, gs) = (&y[r.clone()], &gy[r.clone()]);
                    let inner = kernels::dot(ys, gs);
                    for ((d, &yv), &g) in gx[r.clone()].iter_mut().zip(ys).zip(gs) {
                        *d = yv * (g - inner);
                    }
                }
            }
            LayerSpec::MaxPool1d { .. } => {
                if let LayerAux::Pool(idx) = aux {
                    for (&i, &g) in idx.iter().zip(gy) {
                        gx[i as usize] += g;
                    }
                }
            }
            LayerSpec::Dropout { .. } => match aux {
                LayerAux::Mask(mask) => {
                    for ((d, &m), &g) in gx.iter_mut().zip(mask).zip(gy) {
                        *d = g * m;
                    }
                }
                _ => gx.copy_from_slice(gy),
            },
            LayerSpec::BatchNorm => {
                let (c, len) = (lp.input.channels(), lp.input.length());
                let gamma = &p[..c];
                let at = |n: usize, ch: usize| n * in_sz + ch * len;
                match aux {
                    LayerAux::Norm { xhat, inv_std, .. } => {
                        let m = (batch * len) as f64;
                        for ch in 0..c {
                            let (mut sg, mut sgx) = (0.0, 0.0);
                            for n in 0..batch {
                                for j in at(n, ch)..at(n, ch) + len {
                                    sg += gy[j];
                                    sgx += gy[j] * xhat[j];
                                }
                            }
                            gp[ch] += sgx;
                            gp[c + ch] += sg;
                            let k = gamma[ch] * inv_std[ch] / m;
                            for n in 0..batch {
                                for j in at(n, ch)..at(n, ch) + len {
                                    gx[j] = k * (m * gy[j] - sg - xhat[j] * sgx);
                                }
                            }
                        }
                    }
                    _ => {
                        let st = &self.params.running[lp.state.clone()];
                        let (rmean, rvar) = st.split_at(c);
                        for ch in 0..c {
                            let is = 1.0 / (rvar[ch] + BATCH_NORM_EPS).sqrt();
                            for n in 0..batch {
                                for j in at(n, ch)..at(n, ch) + len {
                                    gp[ch] += gy[j] * (x[j] - rmean[ch]) * is;
                                    gp[c + ch] += gy[j];
                                    gx[j] = gy[j] * gamma[ch] * is;
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

pub fn softmax_into(x: &[f64], y: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = (xv - max).exp();
        sum += *yv;
    }
    for yv in y.iter_mut() {
        *yv /= sum;
    }
}
