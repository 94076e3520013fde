//! Warm-up and alternating optimisation of estimators, guidance and encoders.
//!
//! One alternating epoch runs `estimator_steps` rounds of
//! [`estimator_step`] followed by [`guidance_step`] on the same
//! reconstructions, then draws a fresh pool of `pairs_per_epoch` pairs from
//! the updated (now frozen) estimators and walks it in class-cycling
//! minibatches of [`EncoderTrainer::step`].

pub mod queue;
pub mod schedule;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{self, LossWeights, Side};
use crate::models::{
    augment_proxies, extract_proxies, init_encoder_from_teacher, sample_noise, EncoderModel, EstimatorModel, GuidanceModel, ModelConfig, ProxyBank,
    TeacherModel,
};
use crate::nn::optim::{cosine_annealing, Adam};
use crate::nn::{softmax_backward, softmax_rows, Trace};
use crate::seed;
use queue::{EmbeddingQueue, QueueEntry};
pub use schedule::Scheduler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderLoss {
    #[serde(alias = "infonce")]
    QueuedInfonce,
    Triplet,
}

/// Ablation switches. `enc = false` replaces the queued InfoNCE term with the
/// triplet alternative, so that every row still has a cross-modal objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub sem: bool,
    pub align: bool,
    pub modal: bool,
    pub adv: bool,
    pub enc: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { sem: true, align: true, modal: true, adv: true, enc: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub alternating_epochs: usize,
    pub pairs_per_epoch: usize,
    /// Distinct classes per encoder minibatch.
    pub batch_size: usize,
    pub queue_capacity: usize,
    /// Reconstructions per estimator step.
    pub estimator_batch: usize,
    /// Estimator (and guidance) steps per epoch.
    pub estimator_steps: usize,
    pub lr_estimator: f32,
    pub lr_encoder: f32,
    pub lr_guidance: f32,
    pub weights: LossWeights,
    pub toggles: Toggles,
    pub encoder_loss: EncoderLoss,
    pub snapshot_every: usize,
    pub snapshot_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 10,
            alternating_epochs: 60,
            pairs_per_epoch: 512,
            batch_size: 8,
            queue_capacity: 8,
            estimator_batch: 32,
            estimator_steps: 48,
            lr_estimator: 0.004,
            lr_encoder: 2e-3,
            lr_guidance: 1e-3,
            weights: LossWeights::default(),
            toggles: Toggles::default(),
            encoder_loss: EncoderLoss::QueuedInfonce,
            snapshot_every: 5,
            snapshot_count: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        self.weights.validate()?;
        if self.queue_capacity >= num_classes {
            return Err(invalid(format!(
                "queue_capacity {} must be smaller than the number of classes {num_classes}",
                self.queue_capacity
            )));
        }
        if self.batch_size < 2 || self.batch_size > self.queue_capacity {
            return Err(invalid("batch_size must be at least 2 and at most queue_capacity"));
        }
        if self.estimator_batch == 0 || self.estimator_steps == 0 || self.pairs_per_epoch < self.batch_size {
            return Err(invalid("estimator_batch and estimator_steps must be positive, pairs_per_epoch at least batch_size"));
        }
        let lrs = [self.lr_estimator, self.lr_encoder, self.lr_guidance];
        if lrs.iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return Err(invalid("learning rates must be finite and nonnegative"));
        }
        Ok(())
    }

    fn encoder_objective(&self) -> EncoderLoss {
        if self.toggles.enc {
            self.encoder_loss
        } else {
            EncoderLoss::Triplet
        }
    }
}

/// The two frozen teachers and the class universe they span.
#[derive(Clone, Copy)]
pub struct Teachers<'a> {
    pub photo: &'a TeacherModel,
    pub sketch: &'a TeacherModel,
}

impl Teachers<'_> {
    /// Union of both teachers' classes, ascending. This is the proxy-bank order.
    pub fn classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.photo.class_ids().iter().chain(self.sketch.class_ids()).copied().collect();
        set.into_iter().collect()
    }

    fn get(&self, side: Side) -> &TeacherModel {
        match side {
            Side::Photo => self.photo,
            Side::Sketch => self.sketch,
        }
    }

    fn hashes(&self) -> (String, String) {
        (self.photo.param_hash(), self.sketch.param_hash())
    }
}

/// Proxy banks for both teachers over their class union; classes a teacher
/// never saw get trainable rows.
pub fn proxy_banks(teachers: Teachers, dim: usize, seed: u64) -> Result<(ProxyBank, ProxyBank)> {
    let bp = extract_proxies(teachers.photo, dim, seed::derive(seed, "projection_photo"))?;
    let bs = extract_proxies(teachers.sketch, dim, seed::derive(seed, "projection_sketch"))?;
    let order: BTreeSet<usize> = teachers.classes().into_iter().collect();
    let missing_p: BTreeSet<usize> = order.difference(&bp.classes()).copied().collect();
    let missing_s: BTreeSet<usize> = order.difference(&bs.classes()).copied().collect();
    augment_proxies(&bp, &bs, &missing_p, &missing_s, seed)
}

/// Teacher response to a batch of images.
struct Judged {
    trace: Trace,
    probs: Vec<f64>,
    width: usize,
    /// Global class of the local argmax.
    hard: Vec<usize>,
}

fn judge(t: &TeacherModel, x: &[f32], batch: usize) -> Result<Judged> {
    let trace = t.trace(x, batch)?;
    let width = t.num_classes();
    let probs = softmax_rows(trace.output(), width);
    let hard = probs.chunks(width).map(|row| t.class_ids()[argmax(row)]).collect();
    Ok(Judged { trace, probs, width, hard })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Positions in `order` of each of the teacher's classes.
fn slots(t: &TeacherModel, order: &[usize]) -> Vec<usize> {
    t.class_ids().iter().map(|c| order.iter().position(|o| o == c).expect("class in universe")).collect()
}

fn lift(probs: &[f64], width: usize, slots: &[usize], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len() / width * classes];
    for (b, row) in probs.chunks(width).enumerate() {
        for (j, p) in row.iter().enumerate() {
            out[b * classes + slots[j]] = *p;
        }
    }
    out
}

/// Teacher distribution over the bank order used as the adversarial target.
/// A teacher that lacks some classes is averaged with the other modality's
/// teacher so that every class has support.
fn adversarial_target(own: &[f64], other: &[f64], complete: bool) -> Vec<f64> {
    if complete {
        own.to_vec()
    } else {
        own.iter().zip(other).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
}

fn stack(parts: &[&[f32]]) -> Vec<f32> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Scalars recorded for one estimator step (unweighted loss values).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTerms {
    pub sem: f64,
    pub bal: f64,
    pub align: f64,
    pub modal: f64,
    pub adv: f64,
    pub confidence_photo: f64,
    pub confidence_sketch: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderTerms {
    pub metric: f64,
    pub enc: f64,
    pub adv: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub estimator: Vec<EstimatorTerms>,
    pub guidance: Vec<f64>,
    pub encoder: Vec<EncoderTerms>,
}

/// Reconstructions with their teacher-derived labels, ready for encoder training.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPool {
    pub photos: Vec<f32>,
    pub sketches: Vec<f32>,
    pub image_len: usize,
    /// L_metric ground truth per modality.
    pub photo_labels: Vec<usize>,
    pub sketch_labels: Vec<usize>,
    /// Class used for scheduling and queue bookkeeping.
    pub pair_labels: Vec<usize>,
    pub keys: Vec<u64>,
    /// Adversarial targets over the bank order, if teachers are involved.
    pub targets: Option<(Vec<f64>, Vec<f64>)>,
}

impl PairPool {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Labels real or synthetic pairs; `labels` are shared by both modalities.
    pub fn labeled(photos: Vec<f32>, sketches: Vec<f32>, image_len: usize, labels: Vec<usize>, key_base: u64) -> Self {
        let n = labels.len();
        Self {
            photos,
            sketches,
            image_len,
            photo_labels: labels.clone(),
            sketch_labels: labels.clone(),
            pair_labels: labels,
            keys: (0..n as u64).map(|i| key_base + i).collect(),
            targets: None,
        }
    }

    /// Labels index-paired images with the teachers.
    pub fn from_teachers(
        photos: Vec<f32>,
        sketches: Vec<f32>,
        image_len: usize,
        teachers: Teachers,
        key_base: u64,
    ) -> Result<Self> {
        let n = photos.len() / image_len;
        let order = teachers.classes();
        let c = order.len();
        let jp = judge(teachers.photo, &photos, n)?;
        let js = judge(teachers.sketch, &sketches, n)?;
        let lp = lift(&jp.probs, jp.width, &slots(teachers.photo, &order), c);
        let ls = lift(&js.probs, js.width, &slots(teachers.sketch, &order), c);
        let known_p: BTreeSet<usize> = teachers.photo.class_ids().iter().copied().collect();
        let known_s: BTreeSet<usize> = teachers.sketch.class_ids().iter().copied().collect();
        let (mut photo_labels, mut sketch_labels, mut pair_labels) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let (hp, hs) = (jp.hard[i], js.hard[i]);
            let (label_p, label_s, pair) = if !known_p.contains(&hs) {
                (hs, hs, hs)
            } else if !known_s.contains(&hp) {
                (hp, hp, hp)
            } else {
                let sum: Vec<f64> = (0..c).map(|k| lp[i * c + k] + ls[i * c + k]).collect();
                (hp, hs, order[argmax(&sum)])
            };
            photo_labels.push(label_p);
            sketch_labels.push(label_s);
            pair_labels.push(pair);
        }
        let complete_p = known_p.len() == c;
        let complete_s = known_s.len() == c;
        let targets = Some((adversarial_target(&lp, &ls, complete_p), adversarial_target(&ls, &lp, complete_s)));
        Ok(Self {
            photos,
            sketches,
            image_len,
            photo_labels,
            sketch_labels,
            pair_labels,
            keys: (0..n as u64).map(|i| key_base + i).collect(),
            targets,
        })
    }

    /// Adds adversarial targets from the teachers' predictions on the images.
    pub fn attach_targets(&mut self, teachers: Teachers) -> Result<()> {
        let n = self.len();
        let order = teachers.classes();
        let c = order.len();
        let jp = judge(teachers.photo, &self.photos, n)?;
        let js = judge(teachers.sketch, &self.sketches, n)?;
        let lp = lift(&jp.probs, jp.width, &slots(teachers.photo, &order), c);
        let ls = lift(&js.probs, js.width, &slots(teachers.sketch, &order), c);
        let complete_p = teachers.photo.num_classes() == c;
        let complete_s = teachers.sketch.num_classes() == c;
        self.targets = Some((adversarial_target(&lp, &ls, complete_p), adversarial_target(&ls, &lp, complete_s)));
        Ok(())
    }

    /// Indices grouped by pair label (ascending index within each class).
    pub fn buckets(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut b: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.pair_labels.iter().enumerate() {
            b.entry(l).or_default().push(i);
        }
        b
    }

    /// Fraction of pairs on which the two metric labels agree.
    pub fn agreement(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let same = self.photo_labels.iter().zip(&self.sketch_labels).filter(|(a, b)| a == b).count();
        same as f64 / self.len() as f64
    }

    fn gather(&self, images: &[f32], idx: &[usize]) -> Vec<f32> {
        let l = self.image_len;
        idx.iter().flat_map(|&i| images[i * l..(i + 1) * l].iter().copied()).collect()
    }
}

/// Counts (anchor, negative) contrasts and those sharing a class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastCounter {
    pub contrasts: u64,
    pub same_class: u64,
}

/// Encoders, proxy banks, queue and scheduler, trained on [`PairPool`]s.
#[derive(Clone, Debug)]
pub struct EncoderTrainer {
    pub f_p: EncoderModel,
    pub f_s: EncoderModel,
    pub bank_p: ProxyBank,
    pub bank_s: ProxyBank,
    pub queue: EmbeddingQueue,
    pub scheduler: Scheduler,
    pub counter: ContrastCounter,
    opt_p: Adam,
    opt_s: Adam,
    opt_kp: Adam,
    opt_ks: Adam,
    steps: usize,
    total_steps: usize,
}

impl EncoderTrainer {
    pub fn new(
        f_p: EncoderModel,
        f_s: EncoderModel,
        bank_p: ProxyBank,
        bank_s: ProxyBank,
        cfg: &TrainConfig,
        total_steps: usize,
    ) -> Result<Self> {
        if bank_p.class_order != bank_s.class_order {
            return Err(invalid("proxy banks must share one class order"));
        }
        if bank_p.dim != f_p.dim() || bank_s.dim != f_s.dim() {
            return Err(invalid("proxy width differs from embedding width"));
        }
        let scheduler = Scheduler::new(bank_p.class_order.clone());
        Ok(Self {
            opt_p: Adam::new(f_p.net().num_params()),
            opt_s: Adam::new(f_s.net().num_params()),
            opt_kp: Adam::new(bank_p.proxies.len()),
            opt_ks: Adam::new(bank_s.proxies.len()),
            f_p,
            f_s,
            bank_p,
            bank_s,
            queue: EmbeddingQueue::new(cfg.queue_capacity),
            scheduler,
            counter: ContrastCounter::default(),
            steps: 0,
            total_steps,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One descent step of both encoders (and trainable proxies) on the
    /// minibatch `plan` of `pool`.
    pub fn step(&mut self, pool: &PairPool, plan: &[usize], cfg: &TrainConfig, use_adv: bool) -> Result<EncoderTerms> {
        if plan.is_empty() {
            return Err(invalid("empty encoder minibatch"));
        }
        let b = plan.len();
        let w = &cfg.weights;
        let dim = self.f_p.dim();
        let tp = self.f_p.trace(&pool.gather(&pool.photos, plan), b)?;
        let ts = self.f_s.trace(&pool.gather(&pool.sketches, plan), b)?;
        let e_p = to_f64(&tp.unit);
        let e_s = to_f64(&ts.unit);
        let keys: Vec<u64> = plan.iter().map(|&i| pool.keys[i]).collect();
        let classes: Vec<usize> = plan.iter().map(|&i| pool.pair_labels[i]).collect();

        for (r, (&key, &class_id)) in keys.iter().zip(&classes).enumerate() {
            self.queue.push(QueueEntry { key, class_id, embedding: e_p[r * dim..(r + 1) * dim].to_vec() });
        }
        for (&key, &class_id) in keys.iter().zip(&classes) {
            for entry in self.queue.iter().filter(|e| e.key != key) {
                self.counter.contrasts += 1;
                if entry.class_id == class_id {
                    self.counter.same_class += 1;
                    return Err(Error::InvariantViolation(format!(
                        "sketch anchor of class {class_id} contrasted against a same-class queue entry"
                    )));
                }
            }
        }

        let mut g_p = vec![0.0; b * dim];
        let mut g_s = vec![0.0; b * dim];
        let mut terms = EncoderTerms::default();

        let pair_loss = match cfg.encoder_objective() {
            EncoderLoss::QueuedInfonce => losses::l_enc(&e_s, &e_p, &keys, dim, &self.queue, w.tau)?,
            EncoderLoss::Triplet => losses::l_triplet(&e_s, &e_p, &keys, dim, &self.queue, w.triplet_margin)?,
        };
        terms.enc = pair_loss.value;
        add_scaled(&mut g_s, &pair_loss.grads[0], w.enc);
        add_scaled(&mut g_p, &pair_loss.grads[1], w.enc);

        let emb = [e_p.as_slice(), e_s.as_slice()].concat();
        let labels: Vec<usize> = plan
            .iter()
            .map(|&i| pool.photo_labels[i])
            .chain(plan.iter().map(|&i| pool.sketch_labels[i]))
            .collect();
        let sides: Vec<Side> = std::iter::repeat_n(Side::Photo, b).chain(std::iter::repeat_n(Side::Sketch, b)).collect();
        let metric = losses::l_metric(&emb, dim, &labels, &sides, &self.bank_p, &self.bank_s, w.alpha, w.delta)?;
        terms.metric = metric.value;
        add_scaled(&mut g_p, &metric.grads[0][..b * dim], w.metric);
        add_scaled(&mut g_s, &metric.grads[0][b * dim..], w.metric);

        if use_adv && w.adv > 0.0 {
            if let Some((y_p, y_s)) = &pool.targets {
                let c = self.bank_p.len();
                let pick = |y: &[f64]| -> Vec<f64> { plan.iter().flat_map(|&i| y[i * c..(i + 1) * c].iter().copied()).collect() };
                let kp = losses::l_adv_kl(&e_p, dim, &self.bank_p, &pick(y_p), w.tau_adv)?;
                let ks = losses::l_adv_kl(&e_s, dim, &self.bank_s, &pick(y_s), w.tau_adv)?;
                terms.adv = kp.value + ks.value;
                add_scaled(&mut g_p, &kp.grads[0], w.adv);
                add_scaled(&mut g_s, &ks.grads[0], w.adv);
            }
        }

        let lr = cosine_annealing(cfg.lr_encoder, self.steps, self.total_steps);
        let mut pg = self.f_p.net().zero_grads();
        self.f_p.backward(&tp, &to_f32(&g_p), &mut pg);
        self.opt_p.step(self.f_p.net_mut().params_mut(), &pg, lr);
        let mut pg = self.f_s.net().zero_grads();
        self.f_s.backward(&ts, &to_f32(&g_s), &mut pg);
        self.opt_s.step(self.f_s.net_mut().params_mut(), &pg, lr);
        if self.bank_p.has_trainable() {
            let g: Vec<f64> = metric.grads[1].iter().map(|v| v * w.metric).collect();
            self.opt_kp.step_f64(&mut self.bank_p.proxies, &g, lr);
        }
        if self.bank_s.has_trainable() {
            let g: Vec<f64> = metric.grads[2].iter().map(|v| v * w.metric).collect();
            self.opt_ks.step_f64(&mut self.bank_s.proxies, &g, lr);
        }
        self.steps += 1;
        if !(terms.metric.is_finite() && terms.enc.is_finite() && terms.adv.is_finite()) {
            return Err(Error::TrainingFailure(format!("non-finite encoder loss: {terms:?}")));
        }
        Ok(terms)
    }

    /// `steps` scheduled minibatches over a fixed pool.
    pub fn run(&mut self, pool: &PairPool, cfg: &TrainConfig, steps: usize, use_adv: bool) -> Result<Vec<EncoderTerms>> {
        let buckets = pool.buckets();
        let needed = cfg.batch_size.max(cfg.queue_capacity);
        if buckets.len() < needed {
            return Err(Error::SchedulingFailure(format!(
                "only {} distinct classes among {} pairs; {needed} needed",
                buckets.len(),
                pool.len()
            )));
        }
        (0..steps)
            .map(|_| {
                let plan = self.scheduler.next_batch(&buckets, cfg.batch_size)?;
                self.step(pool, &plan, cfg, use_adv)
            })
            .collect()
    }

    /// Walks `pool` in `pool.len() / batch_size` scheduled minibatches.
    pub fn epoch(&mut self, pool: &PairPool, cfg: &TrainConfig, use_adv: bool) -> Result<Vec<EncoderTerms>> {
        let buckets = pool.buckets();
        let needed = cfg.batch_size.max(cfg.queue_capacity);
        if buckets.len() < needed {
            return Err(Error::SchedulingFailure(format!(
                "only {} distinct classes among {} reconstructions; {needed} needed",
                buckets.len(),
                pool.len()
            )));
        }
        let steps = pool.len() / cfg.batch_size;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let plan = self.scheduler.next_batch(&buckets, cfg.batch_size)?;
            out.push(self.step(pool, &plan, cfg, use_adv)?);
        }
        Ok(out)
    }
}

/// Free-function form of [`Scheduler::next_batch`].
pub fn schedule_minibatch(
    buckets: &BTreeMap<usize, Vec<usize>>,
    scheduler: &mut Scheduler,
    cfg: &TrainConfig,
) -> Result<Vec<usize>> {
    scheduler.next_batch(buckets, cfg.batch_size)
}

#[derive(Clone, Debug)]
pub struct DistillState {
    pub g_p: EstimatorModel,
    pub g_s: EstimatorModel,
    pub d: GuidanceModel,
    pub encoders: EncoderTrainer,
    pub epoch: usize,
    pub history: LossHistory,
    opt_gp: Adam,
    opt_gs: Adam,
    opt_d: Adam,
    estimator_steps: usize,
}

impl DistillState {
    /// Fresh estimators and guidance, encoders initialised from the teachers.
    pub fn new(
        teachers: Teachers,
        bank_p: ProxyBank,
        bank_s: ProxyBank,
        model: &ModelConfig,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let order = teachers.classes();
        cfg.validate(order.len())?;
        if bank_p.class_order != order {
            return Err(invalid("proxy banks do not cover the teachers' class universe"));
        }
        let image = teachers.photo.net().input_shape();
        if teachers.sketch.net().input_shape() != image {
            return Err(invalid("teachers expect different image shapes"));
        }
        let s = cfg.seed;
        let mut g_p = EstimatorModel::new(model, image, seed::derive(s, "estimator_photo"))?;
        let mut g_s = EstimatorModel::new(model, image, seed::derive(s, "estimator_sketch"))?;
        g_p.center_output(teachers.photo.input_mean());
        g_s.center_output(teachers.sketch.input_mean());
        let d = GuidanceModel::new(model, image, seed::derive(s, "guidance"))?;
        let f_p = init_encoder_from_teacher(teachers.photo, model.embed_dim, seed::derive(s, "encoder_photo"))?;
        let f_s = init_encoder_from_teacher(teachers.sketch, model.embed_dim, seed::derive(s, "encoder_sketch"))?;
        let total = cfg.alternating_epochs * (cfg.pairs_per_epoch / cfg.batch_size);
        let encoders = EncoderTrainer::new(f_p, f_s, bank_p, bank_s, cfg, total)?;
        Ok(Self {
            opt_gp: Adam::new(g_p.net().num_params()).with_betas(0.5, 0.999),
            opt_gs: Adam::new(g_s.net().num_params()).with_betas(0.5, 0.999),
            opt_d: Adam::new(d.net().num_params()).with_betas(0.5, 0.999),
            g_p,
            g_s,
            d,
            encoders,
            epoch: 0,
            history: LossHistory::default(),
            estimator_steps: 0,
        })
    }
}

/// Photos and sketches generated from one shared `xi` batch.
pub struct Reconstruction {
    pub photos: Vec<f32>,
    pub sketches: Vec<f32>,
    pub xi: Vec<f32>,
    pub batch: usize,
}

pub fn reconstruct_pairs(g_p: &EstimatorModel, g_s: &EstimatorModel, batch: usize, seed: u64) -> Result<Reconstruction> {
    if g_p.noise_dim() != g_s.noise_dim() {
        return Err(invalid("estimators take different noise widths"));
    }
    let xi = sample_noise(batch, g_p.noise_dim(), seed);
    Ok(Reconstruction { photos: g_p.estimate(&xi, batch)?, sketches: g_s.estimate(&xi, batch)?, xi, batch })
}

/// Chain rule through renormalising a distribution over `subset` positions:
/// returns the renormalised rows.
fn renormalize(probs: &[f64], width: usize, subset: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len() / width * subset.len());
    for row in probs.chunks(width) {
        let z: f64 = subset.iter().map(|&j| row[j]).sum::<f64>().max(1e-12);
        out.extend(subset.iter().map(|&j| row[j] / z));
    }
    out
}

fn renormalize_backward(probs: &[f64], width: usize, subset: &[usize], grad: &[f64], out: &mut [f64], scale: f64) {
    let k = subset.len();
    for (r, row) in probs.chunks(width).enumerate() {
        let z: f64 = subset.iter().map(|&j| row[j]).sum::<f64>().max(1e-12);
        let g = &grad[r * k..(r + 1) * k];
        let dot: f64 = subset.iter().zip(g).map(|(&j, gi)| gi * row[j] / z).sum();
        for (i, &j) in subset.iter().enumerate() {
            out[r * width + j] += scale * (g[i] - dot) / z;
        }
    }
}

/// One descent step of both estimators on
/// `sem*L_sem + bal*L_bal + align*L_align + modal*L_modal - adv*KL`.
/// Encoders and guidance are read only. Returns the step's reconstructions
/// for the guidance update.
pub fn estimator_step(
    state: &mut DistillState,
    teachers: Teachers,
    cfg: &TrainConfig,
    step_seed: u64,
    warmup: bool,
) -> Result<(EstimatorTerms, Reconstruction)> {
    let w = &cfg.weights;
    let tg = &cfg.toggles;
    let n = cfg.estimator_batch;
    let xi = sample_noise(n, state.g_p.noise_dim(), step_seed);
    let trace_p = state.g_p.net().forward(&xi, n)?;
    let trace_s = state.g_s.net().forward(&xi, n)?;
    let x_p = trace_p.output().to_vec();
    let x_s = trace_s.output().to_vec();
    let img = x_p.len() / n;
    let jp = judge(teachers.photo, &x_p, n)?;
    let js = judge(teachers.sketch, &x_s, n)?;
    let repr_dim = teachers.photo.repr_dim();
    let mut terms = EstimatorTerms {
        confidence_photo: jp.probs.chunks(jp.width).map(|r| r[argmax(r)]).sum::<f64>() / n as f64,
        confidence_sketch: js.probs.chunks(js.width).map(|r| r[argmax(r)]).sum::<f64>() / n as f64,
        ..Default::default()
    };

    let mut gprob = [vec![0.0; jp.probs.len()], vec![0.0; js.probs.len()]];
    let mut grepr = [vec![0.0; n * repr_dim], vec![0.0; n * repr_dim]];
    let mut gimg = [vec![0.0f32; x_p.len()], vec![0.0f32; x_s.len()]];

    for (m, j) in [&jp, &js].into_iter().enumerate() {
        let repr = to_f64(j.trace.layer_output(crate::models::REPR_LAYER));
        if tg.sem {
            let v = losses::l_sem(&j.probs, j.width, &repr, repr_dim, w.act)?;
            terms.sem += v.value;
            add_scaled(&mut gprob[m], &v.grads[0], w.sem);
            add_scaled(&mut grepr[m], &v.grads[1], w.sem);
        }
        if w.bal > 0.0 {
            let v = losses::class_balance(&j.probs, j.width)?;
            terms.bal += v.value;
            add_scaled(&mut gprob[m], &v.grads[0], w.bal);
        }
    }

    if tg.align && w.align > 0.0 {
        let shared: Vec<usize> =
            teachers.photo.class_ids().iter().filter(|c| teachers.sketch.class_ids().contains(c)).copied().collect();
        let pos = |t: &TeacherModel| -> Vec<usize> {
            shared.iter().map(|c| t.class_ids().iter().position(|x| x == c).unwrap()).collect()
        };
        let (sp, ss) = (pos(teachers.photo), pos(teachers.sketch));
        let rows: Vec<usize> = (0..n).filter(|&i| shared.contains(&jp.hard[i]) && shared.contains(&js.hard[i])).collect();
        if shared.len() >= 2 && !rows.is_empty() {
            let pick = |p: &[f64], width: usize| -> Vec<f64> {
                rows.iter().flat_map(|&i| p[i * width..(i + 1) * width].iter().copied()).collect()
            };
            let (pp, ps) = (pick(&jp.probs, jp.width), pick(&js.probs, js.width));
            let (qp, qs) = (renormalize(&pp, jp.width, &sp), renormalize(&ps, js.width, &ss));
            let v = losses::l_align(&qp, &qs, shared.len())?;
            terms.align = v.value;
            let scale = w.align * rows.len() as f64 / n as f64;
            let mut dp = vec![0.0; pp.len()];
            let mut ds = vec![0.0; ps.len()];
            renormalize_backward(&pp, jp.width, &sp, &v.grads[0], &mut dp, scale);
            renormalize_backward(&ps, js.width, &ss, &v.grads[1], &mut ds, scale);
            for (r, &i) in rows.iter().enumerate() {
                add_scaled(&mut gprob[0][i * jp.width..(i + 1) * jp.width], &dp[r * jp.width..(r + 1) * jp.width], 1.0);
                add_scaled(&mut gprob[1][i * js.width..(i + 1) * js.width], &ds[r * js.width..(r + 1) * js.width], 1.0);
            }
        }
    }

    if tg.modal && w.modal > 0.0 {
        let both = stack(&[&x_p, &x_s]);
        let trace = state.d.net().forward(&both, 2 * n)?;
        let bits: Vec<f64> = std::iter::repeat_n(1.0, n).chain(std::iter::repeat_n(0.0, n)).collect();
        let v = losses::l_modal(&to_f64(trace.output()), &bits)?;
        terms.modal = v.value;
        let g: Vec<f32> = v.grads[0].iter().map(|g| (g * w.modal) as f32).collect();
        let gx = state.d.net().backward(&trace, &g, None);
        add_scaled_f32(&mut gimg[0], &gx[..n * img]);
        add_scaled_f32(&mut gimg[1], &gx[n * img..]);
    }

    if tg.adv && !warmup && w.adv > 0.0 {
        let order = teachers.classes();
        let c = order.len();
        let lp = lift(&jp.probs, jp.width, &slots(teachers.photo, &order), c);
        let ls = lift(&js.probs, js.width, &slots(teachers.sketch, &order), c);
        let complete = [teachers.photo.num_classes() == c, teachers.sketch.num_classes() == c];
        let lifted = [&lp, &ls];
        let judged = [&jp, &js];
        let sides = [Side::Photo, Side::Sketch];
        for m in 0..2 {
            let (x, f, bank) = if m == 0 {
                (&x_p, &state.encoders.f_p, &state.encoders.bank_p)
            } else {
                (&x_s, &state.encoders.f_s, &state.encoders.bank_s)
            };
            let et = f.trace(x, n)?;
            let target = adversarial_target(lifted[m], lifted[1 - m], complete[m]);
            let v = losses::l_adv_kl(&to_f64(&et.unit), f.dim(), bank, &target, w.tau_adv)?;
            terms.adv += v.value;
            // Ascent on KL for the estimators.
            let ge: Vec<f32> = v.grads[0].iter().map(|g| (-w.adv * g) as f32).collect();
            add_scaled_f32(&mut gimg[m], &f.backward_input(&et, &ge));
            let own_share = if complete[m] { 1.0 } else { 0.5 };
            for (k, share) in [(m, own_share), (1 - m, 1.0 - own_share)] {
                if share == 0.0 {
                    continue;
                }
                let t = teachers.get(sides[k]);
                let sl = slots(t, &order);
                let width = judged[k].width;
                for i in 0..n {
                    for (jj, &s) in sl.iter().enumerate() {
                        gprob[k][i * width + jj] -= w.adv * share * v.grads[1][i * c + s];
                    }
                }
            }
        }
    }

    for (m, (j, t)) in [(&jp, teachers.photo), (&js, teachers.sketch)].into_iter().enumerate() {
        let gl = to_f32(&softmax_backward(&j.probs, &gprob[m], j.width));
        let gx = t.backward_input(&j.trace, &gl, &to_f32(&grepr[m]));
        add_scaled_f32(&mut gimg[m], &gx);
    }

    let total = w.sem * terms.sem + w.bal * terms.bal + w.align * terms.align + w.modal * terms.modal - w.adv * terms.adv;
    if !total.is_finite() {
        return Err(Error::TrainingFailure(format!("non-finite estimator objective: {terms:?}")));
    }
    let lr = cfg.lr_estimator;
    let mut pg = state.g_p.net().zero_grads();
    state.g_p.net().backward(&trace_p, &gimg[0], Some(&mut pg));
    state.opt_gp.step(state.g_p.net_mut().params_mut(), &pg, lr);
    let mut pg = state.g_s.net().zero_grads();
    state.g_s.net().backward(&trace_s, &gimg[1], Some(&mut pg));
    state.opt_gs.step(state.g_s.net_mut().params_mut(), &pg, lr);
    state.estimator_steps += 1;
    state.history.estimator.push(terms.clone());
    Ok((terms, Reconstruction { photos: x_p, sketches: x_s, xi, batch: n }))
}

fn add_scaled_f32(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// One descent step of the guidance network on L_modal with true modality bits.
pub fn guidance_step(state: &mut DistillState, recon: &Reconstruction, cfg: &TrainConfig) -> Result<f64> {
    let n = recon.batch;
    if n == 0 {
        return Err(invalid("guidance step on an empty batch"));
    }
    let both = stack(&[&recon.photos, &recon.sketches]);
    let trace = state.d.net().forward(&both, 2 * n)?;
    let bits: Vec<f64> = std::iter::repeat_n(1.0, n).chain(std::iter::repeat_n(0.0, n)).collect();
    let v = losses::l_modal(&to_f64(trace.output()), &bits)?;
    let mut pg = state.d.net().zero_grads();
    state.d.net().backward(&trace, &to_f32(&v.grads[0]), Some(&mut pg));
    state.opt_d.step(state.d.net_mut().params_mut(), &pg, cfg.lr_guidance);
    state.history.guidance.push(v.value);
    Ok(v.value)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub sem: f64,
    pub bal: f64,
    pub align: f64,
    pub modal: f64,
    pub adv_estimator: f64,
    pub guidance: f64,
    pub metric: f64,
    pub enc: f64,
    pub adv_encoder: f64,
    pub confidence_photo: f64,
    pub confidence_sketch: f64,
    /// Agreement of the two teachers' hard labels on the encoder pool.
    pub label_agreement: f64,
    /// Entropy (nats) of the pool's pair-label histogram.
    pub class_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    #[serde(skip)]
    pub photos: Vec<f32>,
    #[serde(skip)]
    pub sketches: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub contrasts: ContrastCounter,
    pub teacher_hashes_unchanged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub snapshots: Vec<Snapshot>,
}

fn mean<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    if items.is_empty() {
        0.0
    } else {
        items.iter().map(f).sum::<f64>() / items.len() as f64
    }
}

fn entropy(pool: &PairPool) -> f64 {
    let b = pool.buckets();
    let n = pool.len() as f64;
    -b.values().map(|v| v.len() as f64 / n).map(|p| p * p.ln()).sum::<f64>()
}

/// Estimator and guidance rounds of one epoch; λ_adv is ignored in warm-up.
fn estimation_rounds(
    state: &mut DistillState,
    teachers: Teachers,
    cfg: &TrainConfig,
    warmup: bool,
    record: &mut EpochRecord,
) -> Result<()> {
    let rounds = cfg.estimator_steps;
    let mut est = Vec::with_capacity(rounds);
    let mut guid = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let s = seed::derive_ints(seed::derive(cfg.seed, "xi"), &[state.epoch as u64, r as u64]);
        let (terms, recon) = estimator_step(state, teachers, cfg, s, warmup)?;
        est.push(terms);
        if cfg.toggles.modal {
            guid.push(guidance_step(state, &recon, cfg)?);
        }
    }
    record.sem = mean(&est, |t| t.sem);
    record.bal = mean(&est, |t| t.bal);
    record.align = mean(&est, |t| t.align);
    record.modal = mean(&est, |t| t.modal);
    record.adv_estimator = mean(&est, |t| t.adv);
    record.confidence_photo = mean(&est, |t| t.confidence_photo);
    record.confidence_sketch = mean(&est, |t| t.confidence_sketch);
    record.guidance = mean(&guid, |v| *v);
    Ok(())
}

/// Warm-up: estimator and guidance steps only, without the adversarial term.
pub fn warmup(state: &mut DistillState, teachers: Teachers, cfg: &TrainConfig, report: &mut TrainReport) -> Result<()> {
    for _ in 0..cfg.warmup_epochs {
        let mut rec = EpochRecord { epoch: state.epoch, phase: "warmup".into(), ..Default::default() };
        estimation_rounds(state, teachers, cfg, true, &mut rec)?;
        log::info!(
            "warm-up epoch {}: confidence {:.3}/{:.3}",
            state.epoch,
            rec.confidence_photo,
            rec.confidence_sketch
        );
        report.epochs.push(rec);
        snapshot(state, cfg, report)?;
        state.epoch += 1;
    }
    Ok(())
}

/// Reconstructions of `count` pairs from the current estimators, labelled by the teachers.
pub fn reconstruct_pool(state: &DistillState, teachers: Teachers, count: usize, seed: u64, key_base: u64) -> Result<PairPool> {
    let r = reconstruct_pairs(&state.g_p, &state.g_s, count, seed)?;
    let img = r.photos.len() / count.max(1);
    PairPool::from_teachers(r.photos, r.sketches, img, teachers, key_base)
}

fn snapshot(state: &DistillState, cfg: &TrainConfig, report: &mut TrainReport) -> Result<()> {
    let last = cfg.warmup_epochs + cfg.alternating_epochs;
    if cfg.snapshot_every == 0 || cfg.snapshot_count == 0 {
        return Ok(());
    }
    if state.epoch % cfg.snapshot_every == 0 || state.epoch + 1 == last {
        let r = reconstruct_pairs(&state.g_p, &state.g_s, cfg.snapshot_count, seed::derive(cfg.seed, "snapshot"))?;
        report.snapshots.push(Snapshot { epoch: state.epoch, photos: r.photos, sketches: r.sketches });
    }
    Ok(())
}

fn alternating_epoch(
    state: &mut DistillState,
    teachers: Teachers,
    cfg: &TrainConfig,
    report: &mut TrainReport,
) -> Result<()> {
    let mut rec = EpochRecord { epoch: state.epoch, phase: "alternating".into(), ..Default::default() };
    estimation_rounds(state, teachers, cfg, false, &mut rec)?;
    let pool_seed = seed::derive_ints(seed::derive(cfg.seed, "pool"), &[state.epoch as u64]);
    let pool = reconstruct_pool(state, teachers, cfg.pairs_per_epoch, pool_seed, (state.epoch as u64) << 32)?;
    rec.label_agreement = pool.agreement();
    rec.class_entropy = entropy(&pool);
    let terms = state.encoders.epoch(&pool, cfg, cfg.toggles.adv)?;
    rec.metric = mean(&terms, |t| t.metric);
    rec.enc = mean(&terms, |t| t.enc);
    rec.adv_encoder = mean(&terms, |t| t.adv);
    state.history.encoder.extend(terms);
    log::info!(
        "epoch {}: conf {:.3}/{:.3} agree {:.2} metric {:.3} enc {:.3} adv {:.3}",
        state.epoch,
        rec.confidence_photo,
        rec.confidence_sketch,
        rec.label_agreement,
        rec.metric,
        rec.enc,
        rec.adv_encoder
    );
    report.epochs.push(rec);
    snapshot(state, cfg, report)?;
    state.epoch += 1;
    Ok(())
}

/// Final state of [`train_crossx`] (only the encoders are meant to be kept).
pub struct CrossxOutput {
    pub f_p: EncoderModel,
    pub f_s: EncoderModel,
    pub state: DistillState,
}

/// Full pipeline: warm-up, then alternating epochs. The report is returned
/// even when training aborts.
pub fn train_crossx(
    teachers: Teachers,
    bank_p: ProxyBank,
    bank_s: ProxyBank,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> (Result<CrossxOutput>, TrainReport) {
    let mut report = TrainReport::default();
    let before = teachers.hashes();
    let result = (|| -> Result<DistillState> {
        let mut state = DistillState::new(teachers, bank_p, bank_s, model, cfg)?;
        warmup(&mut state, teachers, cfg, &mut report)?;
        for _ in 0..cfg.alternating_epochs {
            alternating_epoch(&mut state, teachers, cfg, &mut report)?;
        }
        Ok(state)
    })();
    report.contrasts = match &result {
        Ok(state) => state.encoders.counter.clone(),
        Err(_) => report.contrasts.clone(),
    };
    report.teacher_hashes_unchanged = teachers.hashes() == before;
    let result = result.and_then(|state| {
        if !report.teacher_hashes_unchanged {
            return Err(Error::InvariantViolation("teacher parameters changed during distillation".into()));
        }
        Ok(CrossxOutput { f_p: state.encoders.f_p.clone(), f_s: state.encoders.f_s.clone(), state })
    });
    if let Err(e) = &result {
        report.error = Some(e.to_string());
    }
    (result, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::extract_proxies;

    const IMAGE: [usize; 3] = [1, 32, 32];

    fn teacher(seed: u64, classes: Vec<usize>) -> TeacherModel {
        let mut t = TeacherModel::new(&ModelConfig::default(), IMAGE, classes, seed).unwrap();
        t.freeze();
        t
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            warmup_epochs: 1,
            alternating_epochs: 1,
            pairs_per_epoch: 64,
            estimator_batch: 16,
            batch_size: 4,
            queue_capacity: 4,
            ..Default::default()
        }
    }

    #[test]
    fn proxy_banks_cover_the_class_union() {
        let (tp, ts) = (teacher(1, (0..8).collect()), teacher(2, (2..10).collect()));
        let (bp, bs) = proxy_banks(Teachers { photo: &tp, sketch: &ts }, 32, 4).unwrap();
        assert_eq!(bp.class_order, (0..10).collect::<Vec<_>>());
        assert_eq!(bp.class_order, bs.class_order);
        assert_eq!(bp.trainable_mask.iter().filter(|t| **t).count(), 2);
        assert!(bs.trainable_mask[0] && bs.trainable_mask[1] && !bs.trainable_mask[2]);
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate(10).is_ok());
        assert!(cfg.validate(8).is_err());
        assert!(TrainConfig { batch_size: 9, ..cfg.clone() }.validate(10).is_err());
    }

    #[test]
    fn reconstructions_share_xi() {
        let model = ModelConfig::default();
        let g_p = EstimatorModel::new(&model, IMAGE, 1).unwrap();
        let g_s = EstimatorModel::new(&model, IMAGE, 2).unwrap();
        let r = reconstruct_pairs(&g_p, &g_s, 16, 5).unwrap();
        assert_eq!((r.photos.len(), r.sketches.len()), (16 * 1024, 16 * 1024));
        assert_eq!(g_p.estimate(&r.xi, 16).unwrap(), r.photos);
        assert_eq!(g_s.estimate(&r.xi, 16).unwrap(), r.sketches);
        let rows: BTreeSet<Vec<u32>> = r.xi.chunks(32).map(|row| row.iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(rows.len(), 16);
        assert_eq!(reconstruct_pairs(&g_p, &g_s, 16, 5).unwrap().photos, r.photos);
    }

    fn state_for(tp: &TeacherModel, ts: &TeacherModel, cfg: &TrainConfig) -> DistillState {
        let bp = extract_proxies(tp, 32, 1).unwrap();
        let bs = extract_proxies(ts, 32, 1).unwrap();
        DistillState::new(Teachers { photo: tp, sketch: ts }, bp, bs, &ModelConfig::default(), cfg).unwrap()
    }

    #[test]
    fn estimator_step_touches_only_estimators() {
        let (tp, ts) = (teacher(1, (0..10).collect()), teacher(2, (0..10).collect()));
        let cfg = small_cfg();
        let mut state = state_for(&tp, &ts, &cfg);
        let before = (tp.param_hash(), ts.param_hash());
        let enc = state.encoders.f_p.clone();
        let d = state.d.clone();
        let g = state.g_p.clone();
        let (terms, recon) = estimator_step(&mut state, Teachers { photo: &tp, sketch: &ts }, &cfg, 3, false).unwrap();
        assert!(terms.adv > 0.0 && terms.modal > 0.0);
        assert_eq!((tp.param_hash(), ts.param_hash()), before);
        assert_eq!(state.encoders.f_p, enc);
        assert_eq!(state.d, d);
        assert_ne!(state.g_p, g);
        assert_eq!(state.history.estimator.len(), 1);
        let g_now = state.g_p.clone();
        guidance_step(&mut state, &recon, &cfg).unwrap();
        assert_eq!(state.g_p, g_now);
        assert_ne!(state.d, d);
    }

    #[test]
    fn sem_only_leaves_other_terms_at_zero() {
        let (tp, ts) = (teacher(1, (0..10).collect()), teacher(2, (0..10).collect()));
        let mut cfg = small_cfg();
        cfg.toggles = Toggles { sem: true, align: false, modal: false, adv: false, enc: false };
        let mut state = state_for(&tp, &ts, &cfg);
        let (terms, _) = estimator_step(&mut state, Teachers { photo: &tp, sketch: &ts }, &cfg, 3, false).unwrap();
        assert_eq!((terms.align, terms.modal, terms.adv), (0.0, 0.0, 0.0));
        assert!(terms.sem != 0.0);
    }

    #[test]
    fn renormalisation_gradient_matches_differences() {
        let p = [0.1, 0.5, 0.15, 0.25];
        let subset = [0, 2, 3];
        let g = [0.3, -1.2, 0.7];
        let mut out = [0.0; 4];
        renormalize_backward(&p, 4, &subset, &g, &mut out, 1.0);
        let f = |p: &[f64]| -> f64 { renormalize(p, 4, &subset).iter().zip(&g).map(|(a, b)| a * b).sum() };
        for j in 0..4 {
            let mut up = p;
            let mut dn = p;
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            assert!((out[j] - (f(&up) - f(&dn)) / 2e-6).abs() < 1e-7);
        }
    }

    #[test]
    fn same_class_negative_is_an_invariant_violation() {
        let (tp, ts) = (teacher(1, (0..10).collect()), teacher(2, (0..10).collect()));
        let cfg = small_cfg();
        let mut state = state_for(&tp, &ts, &cfg);
        let pool = PairPool::labeled(vec![0.5; 4 * 1024], vec![0.5; 4 * 1024], 1024, vec![0, 1, 2, 0], 0);
        let err = state.encoders.step(&pool, &[0, 1, 2, 3], &cfg, false).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation(_)));
        let mut state = state_for(&tp, &ts, &cfg);
        state.encoders.step(&pool, &[0, 1, 2], &cfg, false).unwrap();
        assert_eq!(state.encoders.queue.len(), 3);
        assert_eq!(state.encoders.counter, ContrastCounter { contrasts: 6, same_class: 0 });
    }

    #[test]
    fn zero_alternating_epochs_keeps_teacher_initialised_encoders() {
        let (tp, ts) = (teacher(1, (0..10).collect()), teacher(2, (0..10).collect()));
        let cfg = TrainConfig { alternating_epochs: 0, warmup_epochs: 0, ..small_cfg() };
        let bp = extract_proxies(&tp, 32, 1).unwrap();
        let bs = extract_proxies(&ts, 32, 1).unwrap();
        let (out, report) = train_crossx(Teachers { photo: &tp, sketch: &ts }, bp, bs, &ModelConfig::default(), &cfg);
        let out = out.unwrap();
        let init = init_encoder_from_teacher(&tp, 32, seed::derive(cfg.seed, "encoder_photo")).unwrap();
        assert_eq!(out.f_p, init);
        assert!(report.teacher_hashes_unchanged);
    }
}
