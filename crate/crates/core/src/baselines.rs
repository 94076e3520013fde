//! Comparison methods, each evaluated with the same retrieval pipeline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distill::{
    estimator_step, proxy_banks, DistillState, EncoderTrainer, PairPool, Teachers, Toggles, TrainConfig,
};
use crate::error::{invalid, Error, Result};
use crate::losses::Side;
use crate::models::{
    average_teachers, init_encoder_from_teacher, EncoderModel, ModelConfig, TeacherModel, REPR_LAYER,
};
use crate::nn::optim::{cosine_annealing, Adam};
use crate::nn::{l2_normalize_rows, softmax_rows, LayerSpec, Net};
use crate::retrieval::{evaluate, Gallery, Metrics};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    ClassifierOnly,
    UnimodalDistill,
    GaussianPrior,
    WeightAverage,
    MetadataRecon,
    /// Same encoder recipe on real training pairs; an upper bound, not data-free.
    DataDependent,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::ClassifierOnly,
        BaselineKind::UnimodalDistill,
        BaselineKind::GaussianPrior,
        BaselineKind::WeightAverage,
        BaselineKind::MetadataRecon,
        BaselineKind::DataDependent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::ClassifierOnly => "classifier_only",
            BaselineKind::UnimodalDistill => "unimodal_distill",
            BaselineKind::GaussianPrior => "gaussian_prior",
            BaselineKind::WeightAverage => "weight_average",
            BaselineKind::MetadataRecon => "metadata_recon",
            BaselineKind::DataDependent => "data_dependent",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Anything that maps photos and sketches to unit embeddings.
#[derive(Clone, Debug)]
pub enum Embedder {
    Encoders { photo: EncoderModel, sketch: EncoderModel },
    /// L2-normalised representation-layer outputs of classifiers.
    Representations { photo: TeacherModel, sketch: TeacherModel },
}

impl Embedder {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Encoders { photo, .. } => photo.dim(),
            Embedder::Representations { photo, .. } => photo.repr_dim(),
        }
    }

    pub fn embed(&self, side: Side, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        match (self, side) {
            (Embedder::Encoders { photo, .. }, Side::Photo) => photo.embed(x, batch),
            (Embedder::Encoders { sketch, .. }, Side::Sketch) => sketch.embed(x, batch),
            (Embedder::Representations { photo, .. }, Side::Photo) => representation(photo, x, batch),
            (Embedder::Representations { sketch, .. }, Side::Sketch) => representation(sketch, x, batch),
        }
    }
}

pub fn representation(t: &TeacherModel, x: &[f32], batch: usize) -> Result<Vec<f32>> {
    let trace = t.trace(x, batch)?;
    Ok(l2_normalize_rows(trace.layer_output(REPR_LAYER), t.repr_dim()).0)
}

/// Sketch queries against the photo gallery.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_embedder(
    embedder: &Embedder,
    photos: &[f32],
    photo_labels: &[usize],
    sketches: &[f32],
    sketch_labels: &[usize],
    k: usize,
    seed: u64,
    method: &str,
) -> Result<Metrics> {
    let dim = embedder.dim();
    let g = embedder.embed(Side::Photo, photos, photo_labels.len())?;
    let q = embedder.embed(Side::Sketch, sketches, sketch_labels.len())?;
    let gallery = Gallery::from_f32(&g, dim, photo_labels.to_vec())?;
    let queries = Gallery::from_f32(&q, dim, sketch_labels.to_vec())?;
    let r = evaluate(&queries, &gallery, k)?;
    Ok(Metrics::from_result(&r, gallery.len(), seed, method))
}

pub fn run_classifier_only(t_p: &TeacherModel, t_s: &TeacherModel) -> Embedder {
    Embedder::Representations { photo: t_p.clone(), sketch: t_s.clone() }
}

/// One network (the parameter mean of both teachers) encodes both modalities.
pub fn run_weight_average(t_p: &TeacherModel, t_s: &TeacherModel) -> Result<Embedder> {
    let avg = average_teachers(t_p, t_s)?;
    Ok(Embedder::Representations { photo: avg.clone(), sketch: avg })
}

fn encoder_trainer(teachers: Teachers, model: &ModelConfig, cfg: &TrainConfig, total_steps: usize) -> Result<EncoderTrainer> {
    let (bp, bs) = proxy_banks(teachers, model.embed_dim, cfg.seed)?;
    let f_p = init_encoder_from_teacher(teachers.photo, model.embed_dim, seed::derive(cfg.seed, "encoder_photo"))?;
    let f_s = init_encoder_from_teacher(teachers.sketch, model.embed_dim, seed::derive(cfg.seed, "encoder_sketch"))?;
    EncoderTrainer::new(f_p, f_s, bp, bs, cfg, total_steps)
}

fn encoder_steps(cfg: &TrainConfig) -> usize {
    cfg.alternating_epochs * (cfg.pairs_per_epoch / cfg.batch_size)
}

fn into_embedder(tr: EncoderTrainer) -> Embedder {
    Embedder::Encoders { photo: tr.f_p, sketch: tr.f_s }
}

/// Encoders trained with the standard recipe on pixel noise from a clamped
/// Gaussian prior, with exactly balanced synthetic labels. Teachers are only
/// used for encoder initialisation and proxies.
pub fn run_gaussian_prior(teachers: Teachers, model: &ModelConfig, cfg: &TrainConfig) -> Result<Embedder> {
    let order = teachers.classes();
    cfg.validate(order.len())?;
    let len = teachers.photo.net().input_len();
    let mut tr = encoder_trainer(teachers, model, cfg, encoder_steps(cfg))?;
    for epoch in 0..cfg.alternating_epochs {
        let s = seed::derive_ints(seed::derive(cfg.seed, "gaussian_prior"), &[epoch as u64]);
        let pool = gaussian_pool(&order, cfg.pairs_per_epoch, len, s, (epoch as u64) << 32);
        tr.epoch(&pool, cfg, false)?;
    }
    Ok(into_embedder(tr))
}

pub const PRIOR_MEAN: f32 = 0.5;
pub const PRIOR_STD: f32 = 0.25;

/// `n` index-paired noise images, labels cycling through `classes`.
pub fn gaussian_pool(classes: &[usize], n: usize, image_len: usize, seed: u64, key_base: u64) -> PairPool {
    let normal = Normal::new(PRIOR_MEAN, PRIOR_STD).unwrap();
    let mut rng = seed::rng(seed);
    let mut draw = |count: usize| -> Vec<f32> { (0..count).map(|_| normal.sample(&mut rng).clamp(0.0, 1.0)).collect() };
    let photos = draw(n * image_len);
    let sketches = draw(n * image_len);
    let labels = (0..n).map(|i| classes[i % classes.len()]).collect();
    PairPool::labeled(photos, sketches, image_len, labels, key_base)
}

/// Encoders trained with the standard recipe on real, index-paired training
/// images with their true labels.
pub fn run_data_dependent(
    teachers: Teachers,
    model: &ModelConfig,
    cfg: &TrainConfig,
    photos: &[f32],
    sketches: &[f32],
    labels: &[usize],
) -> Result<Embedder> {
    cfg.validate(teachers.classes().len())?;
    let len = teachers.photo.net().input_len();
    if photos.len() != labels.len() * len || sketches.len() != photos.len() {
        return Err(invalid("real pairs are misshapen"));
    }
    let mut pool = PairPool::labeled(photos.to_vec(), sketches.to_vec(), len, labels.to_vec(), 0);
    pool.attach_targets(teachers)?;
    let mut tr = encoder_trainer(teachers, model, cfg, encoder_steps(cfg))?;
    tr.run(&pool, cfg, encoder_steps(cfg), cfg.toggles.adv)?;
    Ok(into_embedder(tr))
}

/// Per-modality estimator and classifier student trained by prediction
/// matching only; the student's representation layer is the embedding.
pub fn run_unimodal_distill(teachers: Teachers, model: &ModelConfig, cfg: &TrainConfig) -> Result<Embedder> {
    let mut cfg = cfg.clone();
    cfg.toggles = Toggles { sem: true, align: false, modal: false, adv: false, enc: false };
    let (bp, bs) = proxy_banks(teachers, model.embed_dim, cfg.seed)?;
    let mut state = DistillState::new(teachers, bp, bs, model, &cfg)?;
    let image = teachers.photo.net().input_shape();
    let mut students = Vec::new();
    for (side, t) in [(Side::Photo, teachers.photo), (Side::Sketch, teachers.sketch)] {
        let label = if side == Side::Photo { "student_photo" } else { "student_sketch" };
        let s = TeacherModel::new(model, image, t.class_ids().to_vec(), seed::derive(cfg.seed, label))?;
        let net = s.net().clone();
        students.push((Adam::new(net.num_params()), net));
    }
    let epochs = cfg.warmup_epochs + cfg.alternating_epochs;
    let total = epochs * cfg.estimator_steps;
    let mut step = 0;
    for epoch in 0..epochs {
        for r in 0..cfg.estimator_steps {
            let s = seed::derive_ints(seed::derive(cfg.seed, "xi"), &[epoch as u64, r as u64]);
            let (_, recon) = estimator_step(&mut state, teachers, &cfg, s, true)?;
            if epoch < cfg.warmup_epochs {
                continue;
            }
            let lr = cosine_annealing(cfg.lr_encoder, step, total);
            for ((opt, net), (t, x)) in
                students.iter_mut().zip([(teachers.photo, &recon.photos), (teachers.sketch, &recon.sketches)])
            {
                prediction_matching_step(net, opt, t, x, recon.batch, lr)?;
            }
            step += 1;
        }
    }
    let mut out = students.into_iter().zip([teachers.photo, teachers.sketch]).map(|((_, net), t)| {
        let mut s = TeacherModel::from_net(net, t.class_ids().to_vec())?;
        s.freeze();
        Ok::<_, Error>(s)
    });
    let photo = out.next().unwrap()?;
    let sketch = out.next().unwrap()?;
    Ok(Embedder::Representations { photo, sketch })
}

/// One step on `KL(teacher || student)` for a batch of images.
fn prediction_matching_step(net: &mut Net, opt: &mut Adam, t: &TeacherModel, x: &[f32], batch: usize, lr: f32) -> Result<f64> {
    let c = t.num_classes();
    let target = softmax_rows(&t.forward(x, batch)?.logits, c);
    let trace = net.forward(x, batch)?;
    let probs = softmax_rows(trace.output(), c);
    let mut loss = 0.0;
    for (p, q) in target.iter().zip(&probs) {
        if *p > 0.0 {
            loss += p * (p.max(1e-12).ln() - q.max(1e-12).ln());
        }
    }
    let grad: Vec<f32> = probs.iter().zip(&target).map(|(q, p)| ((q - p) / batch as f64) as f32).collect();
    let mut pg = net.zero_grads();
    net.backward(&trace, &grad, Some(&mut pg));
    opt.step(net.params_mut(), &pg, lr);
    let loss = loss / batch as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingFailure("student loss diverged".into()));
    }
    Ok(loss)
}

/// Per-unit mean and variance of one layer's output (per channel for convolutions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Diagonal activation statistics of every convolution and dense layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub layers: Vec<LayerStats>,
}

fn stat_layers(net: &Net) -> Vec<(usize, usize, usize)> {
    // (layer index, groups, positions per group)
    net.layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            LayerSpec::Conv2d { out_ch, .. } => {
                let s = net.shape_of(i);
                Some((i, *out_ch, s[1] * s[2]))
            }
            LayerSpec::Dense { outputs, .. } => Some((i, *outputs, 1)),
            _ => None,
        })
        .collect()
}

fn moments(y: &[f32], batch: usize, groups: usize, positions: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (batch * positions) as f64;
    let mut mean = vec![0.0; groups];
    let mut sq = vec![0.0; groups];
    for b in 0..batch {
        for g in 0..groups {
            for &v in &y[(b * groups + g) * positions..(b * groups + g + 1) * positions] {
                mean[g] += v as f64;
                sq[g] += (v as f64) * (v as f64);
            }
        }
    }
    let var = mean.iter().zip(&sq).map(|(s, q)| (q / m - (s / m).powi(2)).max(0.0)).collect();
    (mean.iter().map(|s| s / m).collect(), var)
}

/// Statistics of the teacher's activations over `pixels` (its training data).
pub fn capture_stats(t: &TeacherModel, pixels: &[f32]) -> Result<ActivationStats> {
    let len = t.net().input_len();
    let n = pixels.len() / len;
    if n == 0 || pixels.len() != n * len {
        return Err(invalid("cannot capture statistics on empty data"));
    }
    let layers = stat_layers(t.net());
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = layers.iter().map(|&(_, g, _)| (vec![0.0; g], vec![0.0; g])).collect();
    for start in (0..n).step_by(256) {
        let b = (n - start).min(256);
        let trace = t.trace(&pixels[start * len..(start + b) * len], b)?;
        for (k, &(i, g, pos)) in layers.iter().enumerate() {
            let (mean, var) = moments(trace.layer_output(i), b, g, pos);
            for j in 0..g {
                // Accumulate first and second raw moments weighted by batch size.
                sums[k].0[j] += mean[j] * b as f64;
                sums[k].1[j] += (var[j] + mean[j] * mean[j]) * b as f64;
            }
        }
    }
    Ok(ActivationStats {
        layers: layers
            .iter()
            .zip(sums)
            .map(|(&(i, _, _), (s, q))| {
                let mean: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
                let var = q.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0)).collect();
                LayerStats { layer: i, mean, var }
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetadataConfig {
    pub batch: usize,
    pub steps: usize,
    /// Initial gradient-descent step on the pixel logits.
    pub step_size: f32,
}

impl Default for MetadataConfig {
    fn default() -> Self {
        Self { batch: 64, steps: 200, step_size: 10.0 }
    }
}

/// Reconstructed images with the per-step statistic distance.
pub struct Reconstruction {
    pub images: Vec<f32>,
    pub losses: Vec<f64>,
}

fn check_stats(layers: &[(usize, usize, usize)], stats: &ActivationStats) -> Result<()> {
    if layers.len() != stats.layers.len()
        || layers.iter().zip(&stats.layers).any(|(&(i, g, _), s)| i != s.layer || s.mean.len() != g || s.var.len() != g)
    {
        return Err(invalid("activation statistics do not match the teacher's layers"));
    }
    Ok(())
}

const STAT_EPS: f64 = 1e-3;

/// Statistic distance at `x = sigmoid(u)` and its gradient in `u`.
fn stat_objective(t: &TeacherModel, stats: &ActivationStats, u: &[f32], batch: usize) -> Result<(f64, Vec<f32>, Vec<f32>)> {
    let layers = stat_layers(t.net());
    let x: Vec<f32> = u.iter().map(|&v| crate::nn::sigmoid(v)).collect();
    let trace = t.trace(&x, batch)?;
    let mut loss = 0.0;
    let mut extras: Vec<(usize, Vec<f32>)> = Vec::with_capacity(layers.len());
    for (&(i, g, pos), target) in layers.iter().zip(&stats.layers) {
        let y = trace.layer_output(i);
        let (mean, var) = moments(y, batch, g, pos);
        let m = (batch * pos) as f64;
        let mut grad = vec![0.0f32; y.len()];
        for j in 0..g {
            let s = target.var[j] + STAT_EPS;
            let dm = (mean[j] - target.mean[j]) / s.sqrt();
            let dv = (var[j] - target.var[j]) / s;
            loss += dm * dm + dv * dv;
            for bb in 0..batch {
                for p in 0..pos {
                    let idx = (bb * g + j) * pos + p;
                    let centred = y[idx] as f64 - mean[j];
                    grad[idx] = ((2.0 * dm / s.sqrt() + 4.0 * dv * centred / s) / m) as f32;
                }
            }
        }
        extras.push((i, grad));
    }
    if !loss.is_finite() {
        return Err(Error::TrainingFailure("statistic matching diverged".into()));
    }
    let extra: Vec<(usize, &[f32])> = extras.iter().map(|(i, g)| (*i, g.as_slice())).collect();
    let zero = vec![0.0f32; trace.output().len()];
    let gx = t.net().backward_with(&trace, &zero, &extra, None);
    let gu = gx.iter().zip(&x).map(|(g, x)| g * x * (1.0 - x)).collect();
    Ok((loss, gu, x))
}

/// Gradient descent on `x = sigmoid(u)` minimising the variance-scaled gaps
/// between batch and recorded per-unit means and variances. A step that would
/// increase the distance is halved until it does not.
pub fn reconstruct_from_stats(t: &TeacherModel, stats: &ActivationStats, cfg: &MetadataConfig, seed: u64) -> Result<Reconstruction> {
    check_stats(&stat_layers(t.net()), stats)?;
    let b = cfg.batch;
    let len = t.net().input_len();
    let mut rng = seed::rng(seed);
    let mut u: Vec<f32> = (0..b * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut loss, mut grad, mut x) = stat_objective(t, stats, &u, b)?;
    let mut losses = vec![loss];
    let mut step = cfg.step_size;
    for _ in 0..cfg.steps {
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<f32> = u.iter().zip(&grad).map(|(u, g)| u - step * g).collect();
            let (l, g, xt) = stat_objective(t, stats, &trial, b)?;
            if l <= loss {
                (u, loss, grad, x) = (trial, l, g, xt);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        losses.push(loss);
        if !accepted {
            break;
        }
    }
    Ok(Reconstruction { images: x, losses })
}

/// Encoders trained with the standard recipe on statistic-matching
/// reconstructions. Photos and sketches are paired by their teachers' labels.
pub fn run_metadata_recon(
    teachers: Teachers,
    stats_p: &ActivationStats,
    stats_s: &ActivationStats,
    model: &ModelConfig,
    cfg: &TrainConfig,
    meta: &MetadataConfig,
) -> Result<Embedder> {
    cfg.validate(teachers.classes().len())?;
    let len = teachers.photo.net().input_len();
    let chunks = cfg.pairs_per_epoch.div_ceil(meta.batch);
    let mut by_class: [BTreeMap<usize, Vec<Vec<f32>>>; 2] = Default::default();
    for (m, (t, stats)) in [(teachers.photo, stats_p), (teachers.sketch, stats_s)].into_iter().enumerate() {
        for c in 0..chunks {
            let s = seed::derive_ints(seed::derive(cfg.seed, if m == 0 { "meta_photo" } else { "meta_sketch" }), &[c as u64]);
            let r = reconstruct_from_stats(t, stats, meta, s)?;
            let labels = t.predict_labels(&r.images, meta.batch)?;
            for (i, l) in labels.into_iter().enumerate() {
                by_class[m].entry(l).or_default().push(r.images[i * len..(i + 1) * len].to_vec());
            }
        }
    }
    let (mut photos, mut sketches, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (c, ps) in &by_class[0] {
        if let Some(ss) = by_class[1].get(c) {
            for (p, s) in ps.iter().zip(ss.iter().cycle()).take(ps.len().max(ss.len())) {
                photos.extend_from_slice(p);
                sketches.extend_from_slice(s);
                labels.push(*c);
            }
        }
    }
    let pool = PairPool::labeled(photos, sketches, len, labels, 0);
    let mut tr = encoder_trainer(teachers, model, cfg, encoder_steps(cfg))?;
    tr.run(&pool, cfg, encoder_steps(cfg), false)?;
    Ok(into_embedder(tr))
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMAGE: [usize; 3] = [1, 32, 32];

    fn teacher(seed: u64) -> TeacherModel {
        let mut t = TeacherModel::new(&ModelConfig::default(), IMAGE, (0..10).collect(), seed).unwrap();
        t.freeze();
        t
    }

    #[test]
    fn classifier_only_embeddings_are_unit_and_deterministic() {
        let (tp, ts) = (teacher(1), teacher(2));
        let e = run_classifier_only(&tp, &ts);
        let x: Vec<f32> = (0..3 * 1024).map(|i| (i % 13) as f32 / 13.0).collect();
        let a = e.embed(Side::Photo, &x, 3).unwrap();
        for row in a.chunks(64) {
            assert!((row.iter().map(|v| v * v).sum::<f32>() - 1.0).abs() < 1e-5);
        }
        assert_eq!(a, run_classifier_only(&tp, &ts).embed(Side::Photo, &x, 3).unwrap());
    }

    #[test]
    fn weight_average_of_a_teacher_with_itself_is_identity() {
        let tp = teacher(1);
        let e = run_weight_average(&tp, &tp).unwrap();
        let x: Vec<f32> = (0..2 * 1024).map(|i| (i % 7) as f32 / 7.0).collect();
        assert_eq!(e.embed(Side::Sketch, &x, 2).unwrap(), representation(&tp, &x, 2).unwrap());
    }

    #[test]
    fn gaussian_pool_is_balanced_with_prior_moments() {
        let classes: Vec<usize> = (0..10).collect();
        let pool = gaussian_pool(&classes, 200, 1024, 3, 0);
        let counts = pool.buckets().values().map(Vec::len).collect::<Vec<_>>();
        assert!(counts.iter().all(|&c| c == 20));
        let n = pool.photos.len() as f64;
        let mean = pool.photos.iter().map(|&v| v as f64).sum::<f64>() / n;
        // Clamping to [0, 1] is symmetric about the prior mean.
        assert!((mean - PRIOR_MEAN as f64).abs() < 3.0 * PRIOR_STD as f64 / n.sqrt());
    }

    #[test]
    fn capture_on_empty_data_is_invalid() {
        assert!(capture_stats(&teacher(1), &[]).is_err());
    }

    #[test]
    fn statistic_matching_descends() {
        let t = teacher(3);
        let data: Vec<f32> = (0..64 * 1024).map(|i| ((i * 7919) % 101) as f32 / 101.0).collect();
        let stats = capture_stats(&t, &data).unwrap();
        let cfg = MetadataConfig { batch: 16, steps: 30, step_size: 10.0 };
        let r = reconstruct_from_stats(&t, &stats, &cfg, 5).unwrap();
        assert!(r.losses.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", r.losses);
        assert!(r.losses.last().unwrap() < r.losses.first().unwrap());
    }

    #[test]
    fn kinds_round_trip_by_name() {
        for k in BaselineKind::ALL {
            assert_eq!(BaselineKind::parse(k.name()), Some(k));
        }
    }
}
