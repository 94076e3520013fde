//! Minimal feed-forward network runtime with hand-written backward passes.
//!
//! A [`Net`] is a linear stack of [`LayerSpec`]s whose parameters live in one
//! flat `Vec<f32>`. Keeping parameters flat makes hashing, checkpointing,
//! averaging and optimizer updates plain slice operations.

pub mod ops;
pub mod optim;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use ops::{batch_to_channel_major, channel_to_batch_major, col2im, gemm, im2col, Window};

/// Activation shape of one sample, `(channels, height, width)`.
pub type Shape3 = [usize; 3];

pub fn numel(s: &Shape3) -> usize {
    s[0] * s[1] * s[2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    ConvTranspose2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    /// Fully connected; flattens its input.
    Dense { inputs: usize, outputs: usize },
    Reshape { shape: Shape3 },
    /// Fixed elementwise `scale * x + shift` (no trainable parameters).
    Affine { scale: f32, shift: f32 },
    /// Per-channel standardisation over the batch and spatial positions
    /// (batch statistics always; no running averages, no learned scale).
    BatchNorm { eps: f32 },
    Relu,
    LeakyRelu { slope: f32 },
    Sigmoid,
    Tanh,
}

impl LayerSpec {
    fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, .. }
            | LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, .. } => in_ch * out_ch * kernel * kernel + out_ch,
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            _ => 0,
        }
    }

    fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                if input[0] != in_ch {
                    return Err(invalid(format!("conv expects {in_ch} channels, got {}", input[0])));
                }
                if input[1] + 2 * pad < kernel || input[2] + 2 * pad < kernel {
                    return Err(invalid("conv kernel larger than padded input"));
                }
                Ok([out_ch, (input[1] + 2 * pad - kernel) / stride + 1, (input[2] + 2 * pad - kernel) / stride + 1])
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel, stride, pad } => {
                if input[0] != in_ch {
                    return Err(invalid(format!("deconv expects {in_ch} channels, got {}", input[0])));
                }
                let h = (input[1] - 1) * stride + kernel;
                let w = (input[2] - 1) * stride + kernel;
                if h < 2 * pad || w < 2 * pad {
                    return Err(invalid("deconv padding exceeds output"));
                }
                Ok([out_ch, h - 2 * pad, w - 2 * pad])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if numel(&input) != inputs {
                    return Err(invalid(format!("dense expects {inputs} inputs, got {}", numel(&input))));
                }
                Ok([outputs, 1, 1])
            }
            LayerSpec::Reshape { shape } => {
                if numel(&shape) != numel(&input) {
                    return Err(invalid("reshape changes element count"));
                }
                Ok(shape)
            }
            _ => Ok(input),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
            // Each output pixel of a stride-s transposed conv sees ~ (k/s)^2 taps.
            LayerSpec::ConvTranspose2d { in_ch, kernel, stride, .. } => {
                let taps = kernel.div_ceil(stride);
                in_ch * taps * taps
            }
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

/// Per-layer activations recorded by [`Net::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry is the net output.
    acts: Vec<Vec<f32>>,
}

impl Trace {
    pub fn output(&self) -> &[f32] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn into_output(mut self) -> Vec<f32> {
        self.acts.pop().unwrap_or_default()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of layer `i` (input of layer `i + 1`).
    pub fn layer_output(&self, i: usize) -> &[f32] {
        &self.acts[i + 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape3>,
    offsets: Vec<usize>,
    params: Vec<f32>,
}

impl Net {
    /// Builds a zero-initialised network; see [`Net::init`].
    pub fn new(input: Shape3, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
            offsets.push(total);
            total += layer.param_count();
        }
        Ok(Self { layers, shapes, offsets, params: vec![0.0; total] })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for (i, layer) in self.layers.iter().enumerate() {
            let count = layer.param_count();
            if count == 0 {
                continue;
            }
            let bias = match *layer {
                LayerSpec::Conv2d { out_ch, .. } | LayerSpec::ConvTranspose2d { out_ch, .. } => out_ch,
                LayerSpec::Dense { outputs, .. } => outputs,
                _ => 0,
            };
            let std = (2.0 / layer.fan_in() as f32).sqrt();
            let normal = Normal::new(0.0f32, std).unwrap();
            let p = &mut self.params[self.offsets[i]..self.offsets[i] + count];
            for w in &mut p[..count - bias] {
                *w = normal.sample(rng);
            }
            p[count - bias..].fill(0.0);
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> Shape3 {
        self.shapes[0]
    }

    pub fn output_shape(&self) -> Shape3 {
        *self.shapes.last().unwrap()
    }

    pub fn input_len(&self) -> usize {
        numel(&self.shapes[0])
    }

    pub fn output_len(&self) -> usize {
        numel(self.shapes.last().unwrap())
    }

    /// Shape of layer `i`'s output.
    pub fn shape_of(&self, i: usize) -> Shape3 {
        self.shapes[i + 1]
    }

    /// Per-sample width of layer `i`'s output.
    pub fn output_len_of(&self, i: usize) -> usize {
        numel(&self.shapes[i + 1])
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter slice `(weights, bias)` of layer `i`, if it has any.
    pub fn layer_params(&self, i: usize) -> Option<(&[f32], &[f32])> {
        let count = self.layers[i].param_count();
        if count == 0 {
            return None;
        }
        let bias = match self.layers[i] {
            LayerSpec::Conv2d { out_ch, .. } | LayerSpec::ConvTranspose2d { out_ch, .. } => out_ch,
            LayerSpec::Dense { outputs, .. } => outputs,
            _ => 0,
        };
        let p = &self.params[self.offsets[i]..self.offsets[i] + count];
        Some(p.split_at(count - bias))
    }

    pub fn set_params(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(invalid(format!("expected {} parameters, got {}", self.params.len(), values.len())));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn zero_grads(&self) -> Vec<f32> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, x: &[f32], batch: usize) -> Result<Trace> {
        if x.len() != batch * self.input_len() {
            return Err(invalid(format!(
                "input holds {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_len()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for i in 0..self.layers.len() {
            let out = self.layer_forward(i, acts.last().unwrap(), batch);
            acts.push(out);
        }
        Ok(Trace { batch, acts })
    }

    /// Forward without keeping intermediate activations.
    pub fn predict(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        if x.len() != batch * self.input_len() {
            return Err(invalid(format!(
                "input holds {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_len()
            )));
        }
        let mut cur = x.to_vec();
        for i in 0..self.layers.len() {
            cur = self.layer_forward(i, &cur, batch);
        }
        Ok(cur)
    }

    /// Backpropagates `grad_out` through the trace. Parameter gradients are
    /// accumulated into `param_grads` when given; the input gradient is returned.
    pub fn backward(&self, trace: &Trace, grad_out: &[f32], param_grads: Option<&mut [f32]>) -> Vec<f32> {
        self.backward_with(trace, grad_out, &[], param_grads)
    }

    /// Like [`Net::backward`], additionally adding `extra[j].1` to the
    /// gradient of layer `extra[j].0`'s output (see [`Trace::layer_output`]).
    pub fn backward_with(
        &self,
        trace: &Trace,
        grad_out: &[f32],
        extra: &[(usize, &[f32])],
        mut param_grads: Option<&mut [f32]>,
    ) -> Vec<f32> {
        assert_eq!(grad_out.len(), trace.output().len(), "gradient/output size mismatch");
        let mut grad = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            for (layer, g) in extra {
                if *layer == i {
                    assert_eq!(g.len(), grad.len(), "injected gradient size mismatch");
                    grad.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
                }
            }
            let pg = param_grads.as_deref_mut().map(|g| {
                let count = self.layers[i].param_count();
                &mut g[self.offsets[i]..self.offsets[i] + count]
            });
            grad = self.layer_backward(i, &trace.acts[i], &trace.acts[i + 1], &grad, trace.batch, pg);
        }
        grad
    }

    fn conv_window(&self, i: usize) -> Window {
        let (kernel, stride, pad) = match self.layers[i] {
            LayerSpec::Conv2d { kernel, stride, pad, .. } | LayerSpec::ConvTranspose2d { kernel, stride, pad, .. } => {
                (kernel, stride, pad)
            }
            _ => unreachable!(),
        };
        // A transposed conv sweeps the window over its *output* plane.
        let (img, small) = match self.layers[i] {
            LayerSpec::Conv2d { .. } => (self.shapes[i], self.shapes[i + 1]),
            _ => (self.shapes[i + 1], self.shapes[i]),
        };
        Window { channels: img[0], height: img[1], width: img[2], kernel, stride, pad, out_h: small[1], out_w: small[2] }
    }

    fn layer_forward(&self, i: usize, x: &[f32], batch: usize) -> Vec<f32> {
        let p = &self.params[self.offsets[i]..self.offsets[i] + self.layers[i].param_count()];
        match self.layers[i] {
            LayerSpec::Conv2d { out_ch, .. } => {
                let g = self.conv_window(i);
                let opix = g.out_h * g.out_w;
                let cols = im2col(x, batch, &g);
                let (w, b) = p.split_at(out_ch * g.rows());
                let mut y = vec![0.0f32; out_ch * batch * opix];
                gemm(out_ch, g.rows(), batch * opix, w, false, &cols, false, &mut y, 0.0);
                for (c, bias) in b.iter().enumerate() {
                    for v in &mut y[c * batch * opix..(c + 1) * batch * opix] {
                        *v += bias;
                    }
                }
                channel_to_batch_major(&y, batch, out_ch, opix)
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, .. } => {
                let g = self.conv_window(i);
                let ipix = g.out_h * g.out_w;
                let xt = batch_to_channel_major(x, batch, in_ch, ipix);
                let (w, b) = p.split_at(in_ch * g.rows());
                let mut cols = vec![0.0f32; g.rows() * batch * ipix];
                gemm(g.rows(), in_ch, batch * ipix, w, true, &xt, false, &mut cols, 0.0);
                let mut y = col2im(&cols, batch, &g);
                let plane = g.height * g.width;
                for n in 0..batch {
                    for c in 0..out_ch {
                        for v in &mut y[(n * out_ch + c) * plane..(n * out_ch + c + 1) * plane] {
                            *v += b[c];
                        }
                    }
                }
                y
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = p.split_at(inputs * outputs);
                let mut y = vec![0.0f32; batch * outputs];
                for row in y.chunks_mut(outputs) {
                    row.copy_from_slice(b);
                }
                gemm(batch, inputs, outputs, x, false, w, true, &mut y, 1.0);
                y
            }
            LayerSpec::Reshape { .. } => x.to_vec(),
            LayerSpec::Affine { scale, shift } => x.iter().map(|&v| scale * v + shift).collect(),
            LayerSpec::BatchNorm { eps } => {
                let [c, h, w] = self.shapes[i];
                let (mean, inv) = channel_moments(x, batch, c, h * w, eps);
                let mut y = x.to_vec();
                for (k, chunk) in y.chunks_mut(h * w).enumerate() {
                    let ch = k % c;
                    chunk.iter_mut().for_each(|v| *v = ((*v as f64 - mean[ch]) * inv[ch]) as f32);
                }
                y
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::LeakyRelu { slope } => x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
            LayerSpec::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            LayerSpec::Tanh => x.iter().map(|&v| v.tanh()).collect(),
        }
    }

    fn layer_backward(
        &self,
        i: usize,
        x: &[f32],
        y: &[f32],
        gy: &[f32],
        batch: usize,
        pg: Option<&mut [f32]>,
    ) -> Vec<f32> {
        let p = &self.params[self.offsets[i]..self.offsets[i] + self.layers[i].param_count()];
        match self.layers[i] {
            LayerSpec::Conv2d { out_ch, .. } => {
                let g = self.conv_window(i);
                let opix = g.out_h * g.out_w;
                let gyt = batch_to_channel_major(gy, batch, out_ch, opix);
                let (w, _) = p.split_at(out_ch * g.rows());
                if let Some(pg) = pg {
                    let cols = im2col(x, batch, &g);
                    let (gw, gb) = pg.split_at_mut(out_ch * g.rows());
                    gemm(out_ch, batch * opix, g.rows(), &gyt, false, &cols, true, gw, 1.0);
                    for (c, b) in gb.iter_mut().enumerate() {
                        *b += gyt[c * batch * opix..(c + 1) * batch * opix].iter().sum::<f32>();
                    }
                }
                let mut gcols = vec![0.0f32; g.rows() * batch * opix];
                gemm(g.rows(), out_ch, batch * opix, w, true, &gyt, false, &mut gcols, 0.0);
                col2im(&gcols, batch, &g)
            }
            LayerSpec::ConvTranspose2d { in_ch, out_ch, .. } => {
                let g = self.conv_window(i);
                let ipix = g.out_h * g.out_w;
                let gcols = im2col(gy, batch, &g);
                let (w, _) = p.split_at(in_ch * g.rows());
                if let Some(pg) = pg {
                    let xt = batch_to_channel_major(x, batch, in_ch, ipix);
                    let (gw, gb) = pg.split_at_mut(in_ch * g.rows());
                    gemm(in_ch, batch * ipix, g.rows(), &xt, false, &gcols, true, gw, 1.0);
                    let plane = g.height * g.width;
                    for n in 0..batch {
                        for (c, b) in gb.iter_mut().enumerate() {
                            *b += gy[(n * out_ch + c) * plane..(n * out_ch + c + 1) * plane].iter().sum::<f32>();
                        }
                    }
                }
                let mut gxt = vec![0.0f32; in_ch * batch * ipix];
                gemm(in_ch, g.rows(), batch * ipix, w, false, &gcols, false, &mut gxt, 0.0);
                channel_to_batch_major(&gxt, batch, in_ch, ipix)
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = p.split_at(inputs * outputs);
                if let Some(pg) = pg {
                    let (gw, gb) = pg.split_at_mut(inputs * outputs);
                    gemm(outputs, batch, inputs, gy, true, x, false, gw, 1.0);
                    for row in gy.chunks(outputs) {
                        for (b, g) in gb.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                }
                let mut gx = vec![0.0f32; batch * inputs];
                gemm(batch, outputs, inputs, gy, false, w, false, &mut gx, 0.0);
                gx
            }
            LayerSpec::Reshape { .. } => gy.to_vec(),
            LayerSpec::Affine { scale, .. } => gy.iter().map(|&g| scale * g).collect(),
            LayerSpec::BatchNorm { eps } => {
                let [c, h, w] = self.shapes[i];
                let pos = h * w;
                let (_, inv) = channel_moments(x, batch, c, pos, eps);
                let m = (batch * pos) as f64;
                let mut sg = vec![0.0f64; c];
                let mut sgy = vec![0.0f64; c];
                for (k, (yc, gc)) in y.chunks(pos).zip(gy.chunks(pos)).enumerate() {
                    for (&yv, &gv) in yc.iter().zip(gc) {
                        sg[k % c] += gv as f64;
                        sgy[k % c] += (gv * yv) as f64;
                    }
                }
                let mut gx = vec![0.0f32; gy.len()];
                for (k, ((out, yc), gc)) in gx.chunks_mut(pos).zip(y.chunks(pos)).zip(gy.chunks(pos)).enumerate() {
                    let ch = k % c;
                    for ((o, &yv), &gv) in out.iter_mut().zip(yc).zip(gc) {
                        *o = (inv[ch] * (gv as f64 - sg[ch] / m - yv as f64 * sgy[ch] / m)) as f32;
                    }
                }
                gx
            }
            LayerSpec::Relu => x.iter().zip(gy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
            LayerSpec::LeakyRelu { slope } => {
                x.iter().zip(gy).map(|(&v, &g)| if v > 0.0 { g } else { slope * g }).collect()
            }
            LayerSpec::Sigmoid => y.iter().zip(gy).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
            LayerSpec::Tanh => y.iter().zip(gy).map(|(&t, &g)| g * (1.0 - t * t)).collect(),
        }
    }
}

/// Per-channel mean and `1 / sqrt(var + eps)` of an NCHW batch.
fn channel_moments(x: &[f32], batch: usize, channels: usize, positions: usize, eps: f32) -> (Vec<f64>, Vec<f64>) {
    let m = (batch * positions).max(1) as f64;
    let mut sum = vec![0.0f64; channels];
    let mut sq = vec![0.0f64; channels];
    for (k, chunk) in x.chunks(positions).enumerate() {
        for &v in chunk {
            sum[k % channels] += v as f64;
            sq[k % channels] += (v as f64) * (v as f64);
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let inv = sq.iter().zip(&mean).map(|(q, mu)| 1.0 / ((q / m - mu * mu).max(0.0) + eps as f64).sqrt()).collect();
    (mean, inv)
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise numerically stable softmax in double precision.
pub fn softmax_rows(logits: &[f32], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Pulls a gradient with respect to softmax probabilities back to the logits.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.chunks(width).zip(grad_probs.chunks(width)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(a, b)| a * (b - dot)));
    }
    out
}

/// Row-wise L2 normalisation; returns the normalised rows and their norms.
pub fn l2_normalize_rows(x: &[f32], width: usize) -> (Vec<f32>, Vec<f32>) {
    let mut out = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.len() / width.max(1));
    for row in x.chunks(width) {
        let n = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt().max(1e-12);
        norms.push(n as f32);
        out.extend(row.iter().map(|v| (*v as f64 / n) as f32));
    }
    (out, norms)
}

/// Backward of [`l2_normalize_rows`]: `g_x = (g - (g . u) u) / ||x||`.
pub fn l2_normalize_backward(unit: &[f32], norms: &[f32], grad: &[f32], width: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(unit.len());
    for ((u, g), n) in unit.chunks(width).zip(grad.chunks(width)).zip(norms) {
        let dot: f32 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(u.iter().zip(g).map(|(a, b)| (b - dot * a) / n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss_and_grad(net: &Net, x: &[f32], batch: usize, w: &[f32]) -> (f64, Vec<f32>, Vec<f32>) {
        let tr = net.forward(x, batch).unwrap();
        let loss: f64 = tr.output().iter().zip(w).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut pg = net.zero_grads();
        let gx = net.backward(&tr, w, Some(&mut pg));
        (loss, gx, pg)
    }

    fn check_net(layers: Vec<LayerSpec>, input: Shape3, batch: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Net::new(input, layers).unwrap();
        net.init(&mut rng);
        // Nudge biases off zero so every code path is exercised.
        for p in net.params_mut() {
            *p += 0.01;
        }
        let x: Vec<f32> = (0..batch * net.input_len()).map(|_| rng.random::<f32>() - 0.3).collect();
        let w: Vec<f32> = (0..batch * net.output_len()).map(|_| rng.random::<f32>() - 0.5).collect();
        let (_, gx, pg) = loss_and_grad(&net, &x, batch, &w);
        let h = 1e-2f32;
        for idx in (0..x.len()).step_by(x.len() / 7 + 1) {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss_and_grad(&net, &xp, batch, &w).0 - loss_and_grad(&net, &xm, batch, &w).0) / (2.0 * h as f64);
            assert!((fd - gx[idx] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "input grad {idx}: fd {fd} vs {}", gx[idx]);
        }
        for idx in (0..pg.len()).step_by(pg.len() / 11 + 1) {
            let mut np = net.clone();
            np.params_mut()[idx] += h;
            let lp = loss_and_grad(&np, &x, batch, &w).0;
            np.params_mut()[idx] -= 2.0 * h;
            let lm = loss_and_grad(&np, &x, batch, &w).0;
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - pg[idx] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "param grad {idx}: fd {fd} vs {}", pg[idx]);
        }
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        check_net(
            vec![
                LayerSpec::Affine { scale: 1.5, shift: -0.5 },
                LayerSpec::Conv2d { in_ch: 1, out_ch: 3, kernel: 3, stride: 2, pad: 1 },
                LayerSpec::Tanh,
                LayerSpec::Dense { inputs: 3 * 4 * 4, outputs: 5 },
            ],
            [1, 8, 8],
            2,
        );
    }

    #[test]
    fn deconv_stack_gradients_match_finite_differences() {
        check_net(
            vec![
                LayerSpec::Dense { inputs: 4, outputs: 2 * 3 * 3 },
                LayerSpec::Reshape { shape: [2, 3, 3] },
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::BatchNorm { eps: 1e-5 },
                LayerSpec::ConvTranspose2d { in_ch: 2, out_ch: 2, kernel: 4, stride: 2, pad: 1 },
                LayerSpec::BatchNorm { eps: 1e-5 },
                LayerSpec::Sigmoid,
            ],
            [4, 1, 1],
            3,
        );
    }

    #[test]
    fn shapes_are_validated() {
        assert!(Net::new([1, 32, 32], vec![LayerSpec::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, pad: 1 }]).is_err());
        assert!(Net::new([1, 4, 4], vec![LayerSpec::Dense { inputs: 15, outputs: 2 }]).is_err());
        let net = Net::new(
            [1, 32, 32],
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 8, kernel: 3, stride: 2, pad: 1 },
                LayerSpec::Conv2d { in_ch: 8, out_ch: 16, kernel: 3, stride: 2, pad: 1 },
            ],
        )
        .unwrap();
        assert_eq!(net.output_shape(), [16, 8, 8]);
        let up = Net::new([16, 8, 8], vec![LayerSpec::ConvTranspose2d { in_ch: 16, out_ch: 8, kernel: 4, stride: 2, pad: 1 }]).unwrap();
        assert_eq!(up.output_shape(), [8, 16, 16]);
    }

    #[test]
    fn empty_batch_is_vacuous() {
        let net = Net::new([2, 1, 1], vec![LayerSpec::Dense { inputs: 2, outputs: 3 }]).unwrap();
        assert!(net.forward(&[], 0).unwrap().output().is_empty());
    }

    #[test]
    fn softmax_backward_matches_jacobian() {
        let p = softmax_rows(&[0.3, -1.0, 2.0], 3);
        let g = [1.0, -2.0, 0.5];
        let got = softmax_backward(&p, &g, 3);
        for j in 0..3 {
            let want: f64 = (0..3).map(|i| g[i] * p[i] * (if i == j { 1.0 } else { 0.0 } - p[j])).sum();
            assert!((got[j] - want).abs() < 1e-12);
        }
    }
}
