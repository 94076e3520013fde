//! The four network roles, proxy extraction and checkpoints.
//!
//! Every model wraps one [`Net`]. Teachers and encoders share the backbone
//! layout `affine-conv-relu-conv-relu-dense-relu` (layer 6 is the
//! representation layer) followed by a single dense head, so encoder initialisation and
//! weight averaging are plain parameter copies.

pub mod checkpoint;
pub mod proxy;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::nn::optim::{exponential_decay, Adam};
use crate::nn::{l2_normalize_backward, l2_normalize_rows, softmax_rows, LayerSpec, Net, Shape3, Trace};
use crate::seed;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, Role};
pub use proxy::{augment_proxies, ProxyBank};

/// Index of the representation layer `t_{n-1}` within teacher and encoder nets.
pub const REPR_LAYER: usize = 6;
const BACKBONE_LAYERS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_channels: [usize; 2],
    /// Odd kernel size of the stride-2 backbone convolutions.
    pub conv_kernel: usize,
    pub repr_dim: usize,
    pub embed_dim: usize,
    pub noise_dim: usize,
    /// Channels of the estimator's 8x8 seed tensor.
    pub estimator_channels: usize,
    pub guidance_channels: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_channels: [8, 16],
            conv_kernel: 3,
            repr_dim: 64,
            embed_dim: 32,
            noise_dim: 32,
            estimator_channels: 64,
            guidance_channels: [8, 16],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, image: Shape3) -> Result<()> {
        if self.conv_channels.contains(&0) || self.guidance_channels.contains(&0) {
            return Err(invalid("channel counts must be positive"));
        }
        if self.repr_dim == 0 || self.embed_dim == 0 || self.noise_dim == 0 || self.estimator_channels < 2 {
            return Err(invalid("model widths must be positive"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(invalid("conv_kernel must be odd"));
        }
        if image[1] % 4 != 0 || image[2] % 4 != 0 || image[1] < 8 {
            return Err(invalid(format!("image side {} must be a multiple of 4 and at least 8", image[1])));
        }
        Ok(())
    }
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> LayerSpec {
    LayerSpec::Conv2d { in_ch, out_ch, kernel, stride: 2, pad: kernel / 2 }
}

fn deconv(in_ch: usize, out_ch: usize) -> LayerSpec {
    LayerSpec::ConvTranspose2d { in_ch, out_ch, kernel: 4, stride: 2, pad: 1 }
}

fn backbone(cfg: &ModelConfig, image: Shape3) -> Vec<LayerSpec> {
    let [c1, c2] = cfg.conv_channels;
    let flat = c2 * image[1].div_ceil(4) * image[2].div_ceil(4);
    vec![
        LayerSpec::Affine { scale: 1.0, shift: 0.0 },
        conv(image[0], c1, cfg.conv_kernel),
        LayerSpec::Relu,
        conv(c1, c2, cfg.conv_kernel),
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: flat, outputs: cfg.repr_dim },
        LayerSpec::Relu,
    ]
}

fn with_head(cfg: &ModelConfig, image: Shape3, outputs: usize) -> Vec<LayerSpec> {
    let mut layers = backbone(cfg, image);
    layers.push(LayerSpec::Dense { inputs: cfg.repr_dim, outputs });
    layers
}

fn init_net(image: Shape3, layers: Vec<LayerSpec>, seed: u64) -> Result<Net> {
    let mut net = Net::new(image, layers)?;
    net.init(&mut seed::rng(seed));
    Ok(net)
}

/// SHA-256 of the little-endian parameter bytes, hex encoded.
pub fn param_hash(params: &[f32]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn backbone_len(net: &Net) -> usize {
    (0..BACKBONE_LAYERS).filter_map(|i| net.layer_params(i)).map(|(w, b)| w.len() + b.len()).sum()
}

/// Images stacked row-major with one label per image.
#[derive(Clone, Copy, Debug)]
pub struct LabeledImages<'a> {
    pub pixels: &'a [f32],
    pub labels: &'a [usize],
}

impl LabeledImages<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    net: Net,
    /// Global class id of each output unit.
    class_ids: Vec<usize>,
    frozen: bool,
}

pub struct TeacherOutput {
    pub logits: Vec<f32>,
    pub repr: Vec<f32>,
}

impl TeacherModel {
    pub fn new(cfg: &ModelConfig, image: Shape3, class_ids: Vec<usize>, seed: u64) -> Result<Self> {
        cfg.validate(image)?;
        if class_ids.len() < 2 {
            return Err(invalid("a teacher needs at least two classes"));
        }
        let net = init_net(image, with_head(cfg, image, class_ids.len()), seed)?;
        Ok(Self { net, class_ids, frozen: false })
    }

    pub fn from_net(net: Net, class_ids: Vec<usize>) -> Result<Self> {
        if net.layers().len() != BACKBONE_LAYERS + 1 || net.output_len() != class_ids.len() {
            return Err(invalid("network is not a teacher with the given classes"));
        }
        Ok(Self { net, class_ids, frozen: true })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn repr_dim(&self) -> usize {
        self.net.output_len_of(REPR_LAYER)
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn param_hash(&self) -> String {
        param_hash(self.net.params())
    }

    pub fn forward(&self, x: &[f32], batch: usize) -> Result<TeacherOutput> {
        let trace = self.net.forward(x, batch)?;
        let repr = trace.layer_output(REPR_LAYER).to_vec();
        Ok(TeacherOutput { logits: trace.into_output(), repr })
    }

    pub fn trace(&self, x: &[f32], batch: usize) -> Result<Trace> {
        self.net.forward(x, batch)
    }

    /// Input gradient for gradients on the logits and the representation layer.
    /// Parameters are never touched.
    pub fn backward_input(&self, trace: &Trace, grad_logits: &[f32], grad_repr: &[f32]) -> Vec<f32> {
        self.net.backward_with(trace, grad_logits, &[(REPR_LAYER, grad_repr)], None)
    }

    /// Mean input pixel recorded by the standardisation layer.
    pub fn input_mean(&self) -> f32 {
        match self.net.layers().first() {
            Some(LayerSpec::Affine { scale, shift }) if *scale != 0.0 => -shift / scale,
            _ => 0.5,
        }
    }

    pub fn predict_labels(&self, x: &[f32], batch: usize) -> Result<Vec<usize>> {
        let logits = self.net.predict(x, batch)?;
        Ok(logits
            .chunks(self.num_classes())
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                self.class_ids[best]
            })
            .collect())
    }

    pub fn accuracy(&self, data: &LabeledImages) -> Result<f64> {
        if data.is_empty() {
            return Err(invalid("accuracy of an empty set"));
        }
        let pred = self.predict_labels(data.pixels, data.len())?;
        Ok(pred.iter().zip(data.labels).filter(|(p, l)| p == l).count() as f64 / data.len() as f64)
    }
}

/// Convenience form of [`TeacherModel::forward`] returning `(logits, repr)`.
pub fn forward_teacher(t: &TeacherModel, x: &[f32], batch: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let out = t.forward(x, batch)?;
    Ok((out.logits, out.repr))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lr_decay: f32,
    pub weight_decay: f32,
    /// Max random translation in pixels applied to each training image.
    pub shift: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, lr: 0.01, lr_decay: 0.98, weight_decay: 1e-5, shift: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeacherReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains a classifier over the classes present in `train`, then freezes it.
/// `init_seed` fixes the initial weights and `order_seed` the batch order.
pub fn train_teacher(
    train: &LabeledImages,
    held_out: &LabeledImages,
    cfg: &TeacherConfig,
    model: &ModelConfig,
    image: Shape3,
    init_seed: u64,
    order_seed: u64,
) -> Result<(TeacherModel, TeacherReport)> {
    let n = train.len();
    let len = image.iter().product::<usize>();
    if n == 0 || train.pixels.len() != n * len {
        return Err(invalid("teacher training set is empty or misshapen"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch_size must be positive"));
    }
    let mut class_ids: Vec<usize> = train.labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let mut counts = vec![0usize; class_ids.len()];
    let local: Vec<usize> = train.labels.iter().map(|l| class_ids.binary_search(l).unwrap()).collect();
    local.iter().for_each(|&l| counts[l] += 1);
    if counts.iter().max() != counts.iter().min() {
        return Err(invalid("teacher training set is not class balanced"));
    }
    let mut teacher = TeacherModel::new(model, image, class_ids, init_seed)?;
    teacher.net = standardized(&teacher.net, train.pixels)?;
    let c = teacher.num_classes();
    let mut opt = Adam::new(teacher.net.num_params()).with_weight_decay(cfg.weight_decay);
    let mut rng = seed::rng(order_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = exponential_decay(cfg.lr, cfg.lr_decay, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * len);
            for &i in chunk {
                let img = &train.pixels[i * len..(i + 1) * len];
                if cfg.shift == 0 {
                    x.extend_from_slice(img);
                } else {
                    let s = cfg.shift as i64;
                    let (dy, dx) = (rng.random_range(-s..=s), rng.random_range(-s..=s));
                    x.extend(shifted(img, image, dy, dx));
                }
            }
            let trace = teacher.net.forward(&x, b)?;
            let probs = softmax_rows(trace.output(), c);
            let mut grad = vec![0.0f32; b * c];
            for (r, &i) in chunk.iter().enumerate() {
                let y = local[i];
                total -= probs[r * c + y].max(1e-12).ln();
                for k in 0..c {
                    grad[r * c + k] = ((probs[r * c + k] - (k == y) as u8 as f64) / b as f64) as f32;
                }
            }
            let mut pg = teacher.net.zero_grads();
            teacher.net.backward(&trace, &grad, Some(&mut pg));
            opt.step(teacher.net.params_mut(), &pg, lr);
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingFailure(format!("teacher loss diverged at epoch {epoch}")));
        }
        log::debug!("teacher epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    teacher.freeze();
    let train_accuracy = teacher.accuracy(train)?;
    let accuracy = if held_out.is_empty() { train_accuracy } else { teacher.accuracy(held_out)? };
    Ok((teacher, TeacherReport { accuracy, train_accuracy, epoch_losses }))
}

/// Rebuilds `net` with its leading affine layer mapping `pixels` to zero mean
/// and unit variance.
fn standardized(net: &Net, pixels: &[f32]) -> Result<Net> {
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = pixels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / var.sqrt().max(1e-3);
    let mut layers = net.layers().to_vec();
    match layers.first_mut() {
        Some(first @ LayerSpec::Affine { .. }) => {
            *first = LayerSpec::Affine { scale: scale as f32, shift: (-mean * scale) as f32 }
        }
        _ => return Err(invalid("network has no input standardisation layer")),
    }
    let mut out = Net::new(net.input_shape(), layers)?;
    out.set_params(net.params())?;
    Ok(out)
}

/// Translates every channel by `(dy, dx)`, replicating edge pixels.
fn shifted(img: &[f32], shape: Shape3, dy: i64, dx: i64) -> impl Iterator<Item = f32> + '_ {
    let [c, h, w] = shape;
    (0..c * h * w).map(move |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
        let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
        img[ch * h * w + sy * w + sx]
    })
}

/// `dim` orthonormal rows of width `fan_in` (identity when they agree).
pub fn projection_matrix(dim: usize, fan_in: usize, seed: u64) -> Result<Vec<f64>> {
    if dim > fan_in || dim == 0 {
        return Err(invalid(format!("cannot project width {fan_in} to {dim}")));
    }
    if dim == fan_in {
        let mut eye = vec![0.0; dim * dim];
        (0..dim).for_each(|i| eye[i * dim + i] = 1.0);
        return Ok(eye);
    }
    let mut rng = seed::rng(seed);
    let mut rows: Vec<f64> = Vec::with_capacity(dim * fan_in);
    while rows.len() < dim * fan_in {
        let mut v: Vec<f64> = (0..fan_in).map(|_| StandardNormal.sample(&mut rng)).collect();
        for prev in rows.chunks(fan_in) {
            let d: f64 = prev.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(x, p)| *x -= d * p);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.extend(v.into_iter().map(|x| x / n));
        }
    }
    Ok(rows)
}

/// Class proxies from the teacher's final layer: each class weight row is
/// projected by the shared orthonormal projection for `seed` and normalised.
pub fn extract_proxies(t: &TeacherModel, dim: usize, seed: u64) -> Result<ProxyBank> {
    let (w, _) = t.net.layer_params(BACKBONE_LAYERS).expect("teacher head has parameters");
    let fan_in = t.repr_dim();
    let proj = projection_matrix(dim, fan_in, seed)?;
    let mut proxies = Vec::with_capacity(t.num_classes() * dim);
    for row in w.chunks(fan_in) {
        let mut p: Vec<f64> =
            proj.chunks(fan_in).map(|pr| pr.iter().zip(row).map(|(a, &b)| a * b as f64).sum()).collect();
        let n = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        p.iter_mut().for_each(|v| *v /= n);
        proxies.extend(p);
    }
    ProxyBank::new(proxies, dim, t.class_ids.clone())
}

/// Standard-normal draws squashed into `[0, 1]` through the normal CDF.
pub fn sample_noise(batch: usize, n: usize, seed: u64) -> Vec<f32> {
    let mut rng = seed::rng(seed);
    let normal = Normal::standard();
    (0..batch * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            normal.cdf(z) as f32
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorModel {
    net: Net,
}

impl EstimatorModel {
    pub fn new(cfg: &ModelConfig, image: Shape3, seed: u64) -> Result<Self> {
        cfg.validate(image)?;
        let (h, w) = (image[1] / 4, image[2] / 4);
        let c0 = cfg.estimator_channels;
        let layers = vec![
            // Uniform [0, 1] noise to zero mean, unit variance.
            LayerSpec::Affine { scale: 2.0 * 3f32.sqrt(), shift: -(3f32.sqrt()) },
            LayerSpec::Dense { inputs: cfg.noise_dim, outputs: c0 * h * w },
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: [c0, h, w] },
            deconv(c0, c0 / 2),
            LayerSpec::Relu,
            deconv(c0 / 2, image[0]),
            LayerSpec::Sigmoid,
        ];
        Ok(Self { net: init_net([cfg.noise_dim, 1, 1], layers, seed)? })
    }

    pub fn from_net(net: Net) -> Result<Self> {
        if !matches!(net.layers().last(), Some(LayerSpec::Sigmoid)) {
            return Err(invalid("estimator must end in a bounded activation"));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net {
        &mut self.net
    }

    pub fn noise_dim(&self) -> usize {
        self.net.input_len()
    }

    pub fn image_len(&self) -> usize {
        self.net.output_len()
    }

    /// Shifts the output bias so a zero pre-activation maps to `pixel`.
    pub fn center_output(&mut self, pixel: f32) {
        let p = pixel.clamp(0.02, 0.98);
        // The final deconvolution owns the last parameters, its bias at the end.
        let bias = self.net.output_shape()[0];
        let start = self.net.params().len() - bias;
        let logit = (p / (1.0 - p)).ln();
        self.net.params_mut()[start..].iter_mut().for_each(|v| *v = logit);
    }

    pub fn estimate(&self, xi: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.net.predict(xi, batch)
    }
}

/// Convenience form of [`EstimatorModel::estimate`].
pub fn estimate(g: &EstimatorModel, xi: &[f32], batch: usize) -> Result<Vec<f32>> {
    g.estimate(xi, batch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    net: Net,
}

/// Forward state of [`EncoderModel::trace`].
pub struct EncoderTrace {
    pub trace: Trace,
    pub unit: Vec<f32>,
    norms: Vec<f32>,
}

impl EncoderModel {
    /// Randomly initialised encoder (no teacher weights).
    pub fn new(cfg: &ModelConfig, image: Shape3, seed: u64) -> Result<Self> {
        cfg.validate(image)?;
        Ok(Self { net: init_net(image, with_head(cfg, image, cfg.embed_dim), seed)? })
    }

    pub fn from_net(net: Net) -> Result<Self> {
        if net.layers().len() != BACKBONE_LAYERS + 1 {
            return Err(invalid("network is not an encoder"));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net {
        &mut self.net
    }

    pub fn dim(&self) -> usize {
        self.net.output_len()
    }

    pub fn embed(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        let out = self.net.predict(x, batch)?;
        Ok(l2_normalize_rows(&out, self.dim()).0)
    }

    /// Output of the representation layer (before the projection head).
    pub fn backbone(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        Ok(self.net.forward(x, batch)?.layer_output(REPR_LAYER).to_vec())
    }

    pub fn trace(&self, x: &[f32], batch: usize) -> Result<EncoderTrace> {
        let trace = self.net.forward(x, batch)?;
        let (unit, norms) = l2_normalize_rows(trace.output(), self.dim());
        Ok(EncoderTrace { trace, unit, norms })
    }

    /// Accumulates parameter gradients for a gradient on the unit embeddings.
    pub fn backward(&self, t: &EncoderTrace, grad_unit: &[f32], param_grads: &mut [f32]) {
        let g = l2_normalize_backward(&t.unit, &t.norms, grad_unit, self.dim());
        self.net.backward(&t.trace, &g, Some(param_grads));
    }

    /// Input gradient for a gradient on the unit embeddings; parameters untouched.
    pub fn backward_input(&self, t: &EncoderTrace, grad_unit: &[f32]) -> Vec<f32> {
        let g = l2_normalize_backward(&t.unit, &t.norms, grad_unit, self.dim());
        self.net.backward(&t.trace, &g, None)
    }
}

/// Copies the teacher backbone and attaches a fresh `dim`-wide projection head.
pub fn init_encoder_from_teacher(t: &TeacherModel, dim: usize, seed: u64) -> Result<EncoderModel> {
    let mut layers = t.net.layers()[..BACKBONE_LAYERS].to_vec();
    let repr = t.repr_dim();
    layers.push(LayerSpec::Dense { inputs: repr, outputs: dim });
    let mut net = init_net(t.net.input_shape(), layers, seed)?;
    let n = backbone_len(&t.net);
    if backbone_len(&net) != n {
        return Err(invalid("teacher and encoder backbones differ"));
    }
    net.params_mut()[..n].copy_from_slice(&t.net.params()[..n]);
    Ok(EncoderModel { net })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceModel {
    net: Net,
}

impl GuidanceModel {
    pub fn new(cfg: &ModelConfig, image: Shape3, seed: u64) -> Result<Self> {
        cfg.validate(image)?;
        let [c1, c2] = cfg.guidance_channels;
        let flat = c2 * image[1].div_ceil(4) * image[2].div_ceil(4);
        let layers = vec![
            conv(image[0], c1, 3),
            LayerSpec::LeakyRelu { slope: 0.2 },
            conv(c1, c2, 3),
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::Dense { inputs: flat, outputs: 1 },
            LayerSpec::Sigmoid,
        ];
        Ok(Self { net: init_net(image, layers, seed)? })
    }

    pub fn from_net(net: Net) -> Result<Self> {
        if net.output_len() != 1 || !matches!(net.layers().last(), Some(LayerSpec::Sigmoid)) {
            return Err(invalid("guidance must end in a single sigmoid unit"));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net {
        &mut self.net
    }

    /// Probability that each image came from the photo estimator.
    pub fn predict(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.net.predict(x, batch)
    }
}

/// Parameter-wise mean of two architecturally identical teachers.
pub fn average_teachers(a: &TeacherModel, b: &TeacherModel) -> Result<TeacherModel> {
    let same_kind = a.net.layers().len() == b.net.layers().len()
        && a.net.layers().iter().zip(b.net.layers()).all(|pair| match pair {
            (LayerSpec::Affine { .. }, LayerSpec::Affine { .. }) => true,
            (x, y) => x == y,
        });
    if !same_kind || a.net.input_shape() != b.net.input_shape() {
        return Err(invalid("teachers have different architectures"));
    }
    // Input standardisations are averaged like any other parameter.
    let layers = a
        .net
        .layers()
        .iter()
        .zip(b.net.layers())
        .map(|pair| match pair {
            (LayerSpec::Affine { scale: s1, shift: t1 }, LayerSpec::Affine { scale: s2, shift: t2 }) => {
                LayerSpec::Affine { scale: 0.5 * (s1 + s2), shift: 0.5 * (t1 + t2) }
            }
            (x, _) => x.clone(),
        })
        .collect();
    let mut net = Net::new(a.net.input_shape(), layers)?;
    net.set_params(a.net.params())?;
    for (p, q) in net.params_mut().iter_mut().zip(b.net.params()) {
        *p = 0.5 * *p + 0.5 * q;
    }
    let class_ids = if a.class_ids == b.class_ids { a.class_ids.clone() } else { (0..a.num_classes()).collect() };
    TeacherModel::from_net(net, class_ids)
}
