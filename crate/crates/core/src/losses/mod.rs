//! Training objectives with closed-form gradients.
//!
//! Every loss is a pure function over row-major `f64` batches returning a
//! [`LossValue`] whose `grads[i]` is the gradient with respect to the `i`-th
//! differentiable argument (the order is listed on each function). Logs and
//! probability ratios are clamped at [`EPS`].

pub mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::distill::queue::EmbeddingQueue;
use crate::error::{invalid, Error, Result};
use crate::models::ProxyBank;

pub use gradcheck::{finite_difference_check, ArgReport, GradCheckReport};

pub const EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub sem: f64,
    pub bal: f64,
    pub act: f64,
    pub align: f64,
    pub modal: f64,
    pub adv: f64,
    pub metric: f64,
    pub enc: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Temperature of the student softmax over proxies in the adversarial KL.
    pub tau_adv: f64,
    /// Proxy-anchor scale.
    pub alpha: f64,
    /// Proxy-anchor margin.
    pub delta: f64,
    /// Margin of the triplet alternative to InfoNCE.
    pub triplet_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sem: 1.0,
            bal: 5.0,
            act: 0.05,
            align: 1.0,
            modal: 1.0,
            adv: 0.3,
            metric: 1.0,
            enc: 1.0,
            tau: 0.07,
            tau_adv: 1.0,
            alpha: 32.0,
            delta: 0.1,
            triplet_margin: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.sem, self.bal, self.act, self.align, self.modal, self.adv, self.metric, self.enc];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("loss weights must be finite and nonnegative"));
        }
        if !(self.tau > 0.0 && self.tau_adv > 0.0 && self.alpha > 0.0) {
            return Err(invalid("tau, tau_adv and alpha must be positive"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(invalid("delta must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    /// Number of log arguments that hit the epsilon clamp.
    pub clamped: usize,
}

impl LossValue {
    fn check(self, name: &str) -> Result<Self> {
        if self.value.is_finite() {
            Ok(self)
        } else {
            Err(Error::TrainingFailure(format!("{name} is not finite")))
        }
    }
}

fn rows(data: &[f64], width: usize, name: &str) -> Result<usize> {
    if width == 0 || data.len() % width != 0 {
        return Err(invalid(format!("{name}: {} values are not a multiple of width {width}", data.len())));
    }
    Ok(data.len() / width)
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

fn clamp_log(v: f64, clamped: &mut usize) -> (f64, f64) {
    // Returns (log value, derivative of log wrt v).
    if v < EPS {
        *clamped += 1;
        (EPS.ln(), 0.0)
    } else {
        (v.ln(), 1.0 / v)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Semantic consistency: cross-entropy of each prediction to its own hard
/// label minus `act_weight` times the mean absolute representation value.
///
/// Gradients: `[y_hat, repr]`.
pub fn l_sem(y_hat: &[f64], classes: usize, repr: &[f64], repr_dim: usize, act_weight: f64) -> Result<LossValue> {
    let n = rows(y_hat, classes, "l_sem predictions")?;
    if rows(repr, repr_dim, "l_sem representations")? != n {
        return Err(invalid("l_sem: prediction and representation batches differ in length"));
    }
    if n == 0 {
        return Err(invalid("l_sem: empty batch"));
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut clamped = 0;
    let mut g_y = vec![0.0; y_hat.len()];
    let mut g_r = vec![0.0; repr.len()];
    for b in 0..n {
        let row = &y_hat[b * classes..(b + 1) * classes];
        let a = argmax(row);
        let (log, dlog) = clamp_log(row[a], &mut clamped);
        value -= log * scale;
        g_y[b * classes + a] = -dlog * scale;
        let r = &repr[b * repr_dim..(b + 1) * repr_dim];
        let mean_abs = r.iter().map(|v| v.abs()).sum::<f64>() / repr_dim as f64;
        value -= act_weight * mean_abs * scale;
        for (g, v) in g_r[b * repr_dim..(b + 1) * repr_dim].iter_mut().zip(r) {
            *g = -act_weight * v.signum() * (*v != 0.0) as u8 as f64 / repr_dim as f64 * scale;
        }
    }
    LossValue { value, grads: vec![g_y, g_r], clamped }.check("l_sem")
}

/// Negative entropy of the batch-mean prediction; minimal when the batch is
/// class balanced. Gradients: `[y_hat]`.
pub fn class_balance(y_hat: &[f64], classes: usize) -> Result<LossValue> {
    let n = rows(y_hat, classes, "class_balance")?;
    if n == 0 {
        return Err(invalid("class_balance: empty batch"));
    }
    let mut mean = vec![0.0; classes];
    for row in y_hat.chunks(classes) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut value = 0.0;
    let mut clamped = 0;
    let mut dm = vec![0.0; classes];
    for (c, &m) in mean.iter().enumerate() {
        let (log, dlog) = clamp_log(m, &mut clamped);
        value += m * log;
        dm[c] = log + m * dlog;
    }
    let mut g = vec![0.0; y_hat.len()];
    for row in g.chunks_mut(classes) {
        for (gv, d) in row.iter_mut().zip(&dm) {
            *gv = d / n as f64;
        }
    }
    LossValue { value, grads: vec![g], clamped }.check("class_balance")
}

/// Symmetrised KL divergence between index-paired distributions.
/// Gradients: `[y_p, y_s]`.
pub fn l_align(y_p: &[f64], y_s: &[f64], classes: usize) -> Result<LossValue> {
    let n = rows(y_p, classes, "l_align photo")?;
    if y_p.len() != y_s.len() {
        return Err(invalid(format!("l_align: batches of {} and {} values", y_p.len(), y_s.len())));
    }
    if n == 0 {
        return Err(invalid("l_align: empty batch"));
    }
    let scale = 0.5 / n as f64;
    let mut value = 0.0;
    let mut clamped = 0;
    let mut g_p = vec![0.0; y_p.len()];
    let mut g_s = vec![0.0; y_s.len()];
    for i in 0..y_p.len() {
        let (p, s) = (y_p[i], y_s[i]);
        let (lp, dlp) = clamp_log(p, &mut clamped);
        let (ls, dls) = clamp_log(s, &mut clamped);
        // 1/2 [p log(p/s) + s log(s/p)] = 1/2 (p - s)(log p - log s)
        value += (p - s) * (lp - ls) * scale;
        g_p[i] = ((lp - ls) + (p - s) * dlp) * scale;
        g_s[i] = ((ls - lp) + (s - p) * dls) * scale;
    }
    LossValue { value, grads: vec![g_p, g_s], clamped }.check("l_align")
}

/// Binary cross-entropy of the guidance output against modality bits
/// (`1` = photo). Gradients: `[d_out]`.
pub fn l_modal(d_out: &[f64], bits: &[f64]) -> Result<LossValue> {
    if d_out.len() != bits.len() {
        return Err(invalid("l_modal: output and bit batches differ in length"));
    }
    if d_out.is_empty() {
        return Err(invalid("l_modal: empty batch"));
    }
    let scale = 1.0 / d_out.len() as f64;
    let mut value = 0.0;
    let mut clamped = 0;
    let mut g = vec![0.0; d_out.len()];
    for (i, (&d, &m)) in d_out.iter().zip(bits).enumerate() {
        let (l1, dl1) = clamp_log(d, &mut clamped);
        let (l0, dl0) = clamp_log(1.0 - d, &mut clamped);
        value -= (m * l1 + (1.0 - m) * l0) * scale;
        g[i] = (-m * dl1 + (1.0 - m) * dl0) * scale;
    }
    LossValue { value, grads: vec![g], clamped }.check("l_modal")
}

/// Modality of a sample in [`l_metric`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Photo,
    Sketch,
}

/// Proxy-anchor loss with cosine similarity, gated by modality: each sample
/// is compared only against its own modality's bank, and the per-bank losses
/// are summed.
///
/// Gradients: `[emb, bank_p rows, bank_s rows]`; rows of frozen proxies get zero.
pub fn l_metric(
    emb: &[f64],
    dim: usize,
    labels: &[usize],
    sides: &[Side],
    bank_p: &ProxyBank,
    bank_s: &ProxyBank,
    alpha: f64,
    delta: f64,
) -> Result<LossValue> {
    let n = rows(emb, dim, "l_metric embeddings")?;
    if n == 0 {
        return Err(invalid("l_metric: empty batch"));
    }
    if labels.len() != n || sides.len() != n {
        return Err(invalid("l_metric: label/modality batches differ in length from embeddings"));
    }
    if bank_p.dim != dim || bank_s.dim != dim {
        return Err(invalid("l_metric: proxy width differs from embedding width"));
    }
    let mut g_e = vec![0.0; emb.len()];
    let mut value = 0.0;
    let mut bank_grads = Vec::with_capacity(2);
    for (side, bank) in [(Side::Photo, bank_p), (Side::Sketch, bank_s)] {
        let members: Vec<usize> = (0..n).filter(|&i| sides[i] == side).collect();
        let mut g_k = vec![0.0; bank.proxies.len()];
        if !members.is_empty() {
            value += proxy_anchor(emb, dim, labels, &members, bank, alpha, delta, &mut g_e, &mut g_k)?;
        }
        for (slot, &t) in bank.trainable_mask.iter().enumerate() {
            if !t {
                g_k[slot * dim..(slot + 1) * dim].fill(0.0);
            }
        }
        bank_grads.push(g_k);
    }
    let mut grads = vec![g_e];
    grads.extend(bank_grads);
    LossValue { value, grads, clamped: 0 }.check("l_metric")
}

#[allow(clippy::too_many_arguments)]
fn proxy_anchor(
    emb: &[f64],
    dim: usize,
    labels: &[usize],
    members: &[usize],
    bank: &ProxyBank,
    alpha: f64,
    delta: f64,
    g_e: &mut [f64],
    g_k: &mut [f64],
) -> Result<f64> {
    let c = bank.len();
    let slots: Vec<usize> = members
        .iter()
        .map(|&i| bank.slot_of(labels[i]).ok_or_else(|| invalid(format!("label {} has no proxy", labels[i]))))
        .collect::<Result<_>>()?;
    let units: Vec<(Vec<f64>, f64)> = members
        .iter()
        .map(|&i| {
            let e = &emb[i * dim..(i + 1) * dim];
            let norm = dot(e, e).sqrt().max(1e-12);
            (e.iter().map(|v| v / norm).collect(), norm)
        })
        .collect();
    let proxies = bank.normalized();
    let proxy_norms: Vec<f64> = bank.proxies.chunks(dim).map(|r| dot(r, r).sqrt().max(1e-12)).collect();
    // sim[m][k]
    let sim: Vec<Vec<f64>> = units.iter().map(|(u, _)| proxies.chunks(dim).map(|k| dot(u, k)).collect()).collect();
    let positives: Vec<bool> = (0..c).map(|k| slots.contains(&k)).collect();
    let n_pos = positives.iter().filter(|&&p| p).count() as f64;

    let mut value = 0.0;
    // dL/dsim
    let mut ds = vec![vec![0.0; c]; members.len()];
    for k in 0..c {
        let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
        for m in 0..members.len() {
            if slots[m] == k {
                pos_sum += (-alpha * (sim[m][k] - delta)).exp();
            } else {
                neg_sum += (alpha * (sim[m][k] + delta)).exp();
            }
        }
        if positives[k] {
            value += pos_sum.ln_1p() / n_pos;
        }
        value += neg_sum.ln_1p() / c as f64;
        for m in 0..members.len() {
            if slots[m] == k {
                ds[m][k] = -alpha * (-alpha * (sim[m][k] - delta)).exp() / (1.0 + pos_sum) / n_pos;
            } else {
                ds[m][k] = alpha * (alpha * (sim[m][k] + delta)).exp() / (1.0 + neg_sum) / c as f64;
            }
        }
    }
    for (m, &i) in members.iter().enumerate() {
        let (u, norm) = &units[m];
        let mut gu = vec![0.0; dim];
        for k in 0..c {
            let kr = &proxies[k * dim..(k + 1) * dim];
            for j in 0..dim {
                gu[j] += ds[m][k] * kr[j];
            }
        }
        let proj = dot(&gu, u);
        for j in 0..dim {
            g_e[i * dim + j] += (gu[j] - proj * u[j]) / norm;
        }
    }
    for k in 0..c {
        let kr = &proxies[k * dim..(k + 1) * dim];
        let mut gk = vec![0.0; dim];
        for (m, (u, _)) in units.iter().enumerate() {
            for j in 0..dim {
                gk[j] += ds[m][k] * u[j];
            }
        }
        let proj = dot(&gk, kr);
        for j in 0..dim {
            g_k[k * dim + j] += (gk[j] - proj * kr[j]) / proxy_norms[k];
        }
    }
    Ok(value)
}

/// `KL(softmax(emb . K^T / tau) || y_hat)` per sample, batch-averaged. Bank rows
/// are normalised; `y_hat` columns follow the bank's slot order.
///
/// Gradients: `[emb, y_hat, bank rows]`.
pub fn l_adv_kl(emb: &[f64], dim: usize, bank: &ProxyBank, y_hat: &[f64], tau: f64) -> Result<LossValue> {
    let n = rows(emb, dim, "l_adv_kl embeddings")?;
    let c = bank.len();
    if bank.dim != dim {
        return Err(invalid("l_adv_kl: proxy width differs from embedding width"));
    }
    if y_hat.len() != n * c {
        return Err(invalid("l_adv_kl: teacher distributions do not match the batch"));
    }
    if n == 0 {
        return Err(invalid("l_adv_kl: empty batch"));
    }
    let proxies = bank.normalized();
    let proxy_norms: Vec<f64> = bank.proxies.chunks(dim).map(|r| dot(r, r).sqrt().max(1e-12)).collect();
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut clamped = 0;
    let mut g_e = vec![0.0; emb.len()];
    let mut g_y = vec![0.0; y_hat.len()];
    let mut g_kn = vec![0.0; proxies.len()];
    for b in 0..n {
        let e = &emb[b * dim..(b + 1) * dim];
        let z: Vec<f64> = proxies.chunks(dim).map(|k| dot(e, k) / tau).collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
        let log_q: Vec<f64> = z.iter().map(|v| v - lse).collect();
        let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();
        let y = &y_hat[b * c..(b + 1) * c];
        let mut kl = 0.0;
        let mut log_y = vec![0.0; c];
        for k in 0..c {
            let (ly, dly) = clamp_log(y[k], &mut clamped);
            log_y[k] = ly;
            kl += q[k] * (log_q[k] - ly);
            g_y[b * c + k] = -q[k] * dly * scale;
        }
        value += kl * scale;
        for k in 0..c {
            let dz = q[k] * (log_q[k] - log_y[k] - kl) * scale / tau;
            for j in 0..dim {
                g_e[b * dim + j] += dz * proxies[k * dim + j];
                g_kn[k * dim + j] += dz * e[j];
            }
        }
    }
    let mut g_k = vec![0.0; proxies.len()];
    for k in 0..c {
        let kr = &proxies[k * dim..(k + 1) * dim];
        let gk = &g_kn[k * dim..(k + 1) * dim];
        let proj = dot(gk, kr);
        for j in 0..dim {
            g_k[k * dim + j] = (gk[j] - proj * kr[j]) / proxy_norms[k];
        }
    }
    LossValue { value, grads: vec![g_e, g_y, g_k], clamped }.check("l_adv_kl")
}

fn locate_positives(photo_keys: &[u64], queue: &EmbeddingQueue) -> Result<Vec<usize>> {
    photo_keys
        .iter()
        .map(|&k| {
            queue
                .position(k)
                .ok_or_else(|| Error::ContractViolation(format!("positive with key {k} is not in the queue")))
        })
        .collect()
}

/// Queued InfoNCE for sketch anchors against detached photo embeddings.
///
/// The numerator uses the live `photo_emb`; the denominator sums over the
/// queue, which must already contain every positive (matched by key).
/// Gradients: `[sketch_emb, photo_emb]`.
pub fn l_enc(
    sketch_emb: &[f64],
    photo_emb: &[f64],
    photo_keys: &[u64],
    dim: usize,
    queue: &EmbeddingQueue,
    tau: f64,
) -> Result<LossValue> {
    let n = rows(sketch_emb, dim, "l_enc sketches")?;
    if photo_emb.len() != sketch_emb.len() || photo_keys.len() != n {
        return Err(invalid("l_enc: sketch, photo and key batches differ in length"));
    }
    if n == 0 {
        return Err(invalid("l_enc: empty batch"));
    }
    if queue.iter().any(|e| e.embedding.len() != dim) {
        return Err(invalid("l_enc: queue entries have the wrong width"));
    }
    locate_positives(photo_keys, queue)?;
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut g_s = vec![0.0; sketch_emb.len()];
    let mut g_p = vec![0.0; photo_emb.len()];
    for b in 0..n {
        let s = &sketch_emb[b * dim..(b + 1) * dim];
        let p = &photo_emb[b * dim..(b + 1) * dim];
        let logits: Vec<f64> = queue.iter().map(|z| dot(s, &z.embedding) / tau).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let lse = max + total.ln();
        value += (lse - dot(s, p) / tau) * scale;
        for j in 0..dim {
            let expected: f64 = queue.iter().zip(&weights).map(|(z, w)| w / total * z.embedding[j]).sum();
            g_s[b * dim + j] = (expected - p[j]) / tau * scale;
            g_p[b * dim + j] = -s[j] / tau * scale;
        }
    }
    LossValue { value, grads: vec![g_s, g_p], clamped: 0 }.check("l_enc")
}

/// Margin triplet alternative to [`l_enc`]: each sketch anchor against its
/// live positive and every other queue entry as a negative.
/// Gradients: `[sketch_emb, photo_emb]`.
pub fn l_triplet(
    sketch_emb: &[f64],
    photo_emb: &[f64],
    photo_keys: &[u64],
    dim: usize,
    queue: &EmbeddingQueue,
    margin: f64,
) -> Result<LossValue> {
    let n = rows(sketch_emb, dim, "l_triplet sketches")?;
    if photo_emb.len() != sketch_emb.len() || photo_keys.len() != n {
        return Err(invalid("l_triplet: sketch, photo and key batches differ in length"));
    }
    if n == 0 {
        return Err(invalid("l_triplet: empty batch"));
    }
    let mut value = 0.0;
    let mut g_s = vec![0.0; sketch_emb.len()];
    let mut g_p = vec![0.0; photo_emb.len()];
    for b in 0..n {
        let s = &sketch_emb[b * dim..(b + 1) * dim];
        let p = &photo_emb[b * dim..(b + 1) * dim];
        let negs: Vec<&[f64]> = queue.iter().filter(|z| z.key != photo_keys[b]).map(|z| z.embedding.as_slice()).collect();
        if negs.is_empty() {
            continue;
        }
        let scale = 1.0 / (n * negs.len()) as f64;
        let sp = dot(s, p);
        for z in negs {
            let hinge = margin - sp + dot(s, z);
            if hinge > 0.0 {
                value += hinge * scale;
                for j in 0..dim {
                    g_s[b * dim + j] += (z[j] - p[j]) * scale;
                    g_p[b * dim + j] -= s[j] * scale;
                }
            }
        }
    }
    LossValue { value, grads: vec![g_s, g_p], clamped: 0 }.check("l_triplet")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::queue::QueueEntry;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    fn queue(rows: &[(u64, usize, Vec<f64>)]) -> EmbeddingQueue {
        rows.iter().map(|(k, c, e)| QueueEntry { key: *k, class_id: *c, embedding: e.clone() }).collect()
    }

    #[test]
    fn l_sem_scalar_values() {
        close(l_sem(&[1.0, 0.0], 2, &[2.0, -2.0], 2, 1.0).unwrap().value, -2.0, 1e-12);
        close(l_sem(&[0.25; 4], 4, &[0.0; 3], 3, 1.0).unwrap().value, 4f64.ln(), 1e-12);
        close(l_sem(&[0.0, 1.0, 0.0], 3, &[5.0], 1, 0.0).unwrap().value, 0.0, 1e-15);
        let v = l_sem(&[0.0, 0.0], 2, &[0.0], 1, 0.0).unwrap();
        assert_eq!(v.clamped, 1);
        assert!(v.value.is_finite());
    }

    #[test]
    fn class_balance_values() {
        close(class_balance(&[0.9, 0.1, 0.1, 0.9], 2).unwrap().value, -(2f64).ln(), 1e-12);
        close(class_balance(&[0.0, 1.0, 0.0, 0.0, 1.0, 0.0], 3).unwrap().value, 0.0, 1e-12);
        let a = class_balance(&[0.7, 0.2, 0.1, 0.3, 0.3, 0.4], 3).unwrap().value;
        let b = class_balance(&[0.1, 0.7, 0.2, 0.4, 0.3, 0.3], 3).unwrap().value;
        close(a, b, 1e-15);
    }

    #[test]
    fn l_align_values_and_symmetry() {
        close(l_align(&[0.8, 0.2], &[0.6, 0.4], 2).unwrap().value, 0.0981, 1e-4);
        assert_eq!(l_align(&[0.3, 0.7], &[0.3, 0.7], 2).unwrap().value, 0.0);
        let (p, q) = ([0.1, 0.6, 0.3], [0.5, 0.25, 0.25]);
        assert_eq!(l_align(&p, &q, 3).unwrap().value, l_align(&q, &p, 3).unwrap().value);
        assert!(l_align(&p, &q[..2], 3).is_err());
    }

    #[test]
    fn l_modal_values() {
        close(l_modal(&[1.0], &[1.0]).unwrap().value, 0.0, 1e-12);
        close(l_modal(&[0.5, 0.5], &[1.0, 0.0]).unwrap().value, 2f64.ln(), 1e-12);
        let v = l_modal(&[EPS], &[1.0]).unwrap().value;
        close(v, -EPS.ln(), 1e-9);
    }

    fn two_class_bank() -> ProxyBank {
        ProxyBank::new(vec![1.0, 0.0, 0.0, 1.0], 2, vec![0, 1]).unwrap()
    }

    #[test]
    fn l_metric_single_sample() {
        let bank = two_class_bank();
        let v = l_metric(&[1.0, 0.0], 2, &[0], &[Side::Photo], &bank, &bank, 32.0, 0.1).unwrap().value;
        let pos = (-28.8f64).exp().ln_1p();
        close(pos, 3.1e-13, 1e-14);
        let neg = 0.5 * (3.2f64).exp().ln_1p();
        close(v, pos + neg, 1e-12);
        close(v, 1.6200, 1e-4);
    }

    #[test]
    fn l_metric_margin_boundary_terms_are_log_two() {
        // Positive similarity equal to delta and negative similarity equal to -delta.
        let delta: f64 = 0.3;
        let bank = ProxyBank::new(vec![1.0, 0.0, -1.0, 0.0], 2, vec![0, 1]).unwrap();
        let e = [delta, (1.0 - delta * delta).sqrt()];
        let v = l_metric(&e, 2, &[0], &[Side::Sketch], &bank, &bank, 4.0, delta).unwrap().value;
        close(v, 2f64.ln() + 0.5 * 2f64.ln(), 1e-12);
    }

    #[test]
    fn l_metric_is_permutation_invariant_and_gates_by_side() {
        let bank_p = ProxyBank::new(vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8], 2, vec![0, 1, 2]).unwrap();
        let bank_s = ProxyBank::new(vec![0.0, 1.0, 1.0, 0.0, -0.6, 0.8], 2, vec![0, 1, 2]).unwrap();
        let emb = [0.9, 0.1, 0.2, 0.7, -0.5, 0.5, 0.3, 0.3];
        let labels = [0, 1, 2, 1];
        let sides = [Side::Photo, Side::Sketch, Side::Photo, Side::Sketch];
        let a = l_metric(&emb, 2, &labels, &sides, &bank_p, &bank_s, 32.0, 0.1).unwrap().value;
        let perm = [2, 0, 3, 1];
        let emb2: Vec<f64> = perm.iter().flat_map(|&i| emb[2 * i..2 * i + 2].to_vec()).collect();
        let labels2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let sides2: Vec<Side> = perm.iter().map(|&i| sides[i]).collect();
        let b = l_metric(&emb2, 2, &labels2, &sides2, &bank_p, &bank_s, 32.0, 0.1).unwrap().value;
        close(a, b, 1e-12);
        // Gating: the photo-only part does not depend on the sketch bank.
        let photos_only = l_metric(&[0.9, 0.1], 2, &[0], &[Side::Photo], &bank_p, &bank_s, 32.0, 0.1).unwrap().value;
        let other_s = ProxyBank::new(vec![5.0, 1.0, 1.0, 5.0, 2.0, 2.0], 2, vec![0, 1, 2]).unwrap();
        let photos_only2 = l_metric(&[0.9, 0.1], 2, &[0], &[Side::Photo], &bank_p, &other_s, 32.0, 0.1).unwrap().value;
        assert_eq!(photos_only, photos_only2);
        assert!(l_metric(&[], 2, &[], &[], &bank_p, &bank_s, 32.0, 0.1).is_err());
    }

    #[test]
    fn l_metric_duplicates_add_inside_the_log() {
        // Sums (not means) run inside log(1 + .), so a duplicated batch sees
        // doubled exponential mass per proxy.
        let bank = two_class_bank();
        let e = [0.8, 0.6];
        let single = l_metric(&e, 2, &[0], &[Side::Photo], &bank, &bank, 8.0, 0.1).unwrap().value;
        let double = l_metric(&[e, e].concat(), 2, &[0, 0], &[Side::Photo; 2], &bank, &bank, 8.0, 0.1).unwrap().value;
        let pos = (-8.0f64 * (0.8 - 0.1)).exp();
        let neg = (8.0f64 * (0.6 + 0.1)).exp();
        close(single, pos.ln_1p() + 0.5 * neg.ln_1p(), 1e-12);
        close(double, (2.0 * pos).ln_1p() + 0.5 * (2.0 * neg).ln_1p(), 1e-12);
    }

    #[test]
    fn frozen_proxies_receive_no_gradient() {
        let mut bank = two_class_bank();
        bank.trainable_mask = vec![false, true];
        let v = l_metric(&[0.6, 0.8], 2, &[0], &[Side::Photo], &bank, &bank, 32.0, 0.1).unwrap();
        assert!(v.grads[1][..2].iter().all(|&g| g == 0.0));
        assert!(v.grads[1][2..].iter().any(|&g| g != 0.0));
        assert!(v.grads[2].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l_adv_kl_values() {
        let bank = two_class_bank();
        // softmax((a, 0)) = (0.9, 0.1) when a = ln 9.
        let a = 9f64.ln();
        let v = l_adv_kl(&[a, 0.0], 2, &bank, &[0.1, 0.9], 1.0).unwrap().value;
        close(v, 0.9 * 9f64.ln() + 0.1 * (1.0f64 / 9.0).ln(), 1e-12);
        close(v, 1.7578, 1e-4);
        let same = l_adv_kl(&[a, 0.0], 2, &bank, &[0.9, 0.1], 1.0).unwrap().value;
        close(same, 0.0, 1e-12);
    }

    #[test]
    fn l_enc_values() {
        let q = queue(&[(7, 0, vec![1.0, 0.0])]);
        close(l_enc(&[0.3, 0.4], &[1.0, 0.0], &[7], 2, &q, 1.0).unwrap().value, 0.0, 1e-12);
        let q2 = queue(&[(7, 0, vec![1.0, 0.0]), (8, 1, vec![0.0, 1.0])]);
        let v = l_enc(&[1.0, 0.0], &[1.0, 0.0], &[7], 2, &q2, 1.0).unwrap().value;
        close(v, -(1f64.exp() / (1f64.exp() + 1.0)).ln(), 1e-12);
        close(v, 0.3133, 1e-4);
        let q3 = queue(&[(8, 1, vec![0.0, 1.0]), (7, 0, vec![1.0, 0.0])]);
        close(l_enc(&[1.0, 0.0], &[1.0, 0.0], &[7], 2, &q3, 1.0).unwrap().value, v, 1e-15);
        assert!(matches!(
            l_enc(&[1.0, 0.0], &[1.0, 0.0], &[9], 2, &q3, 1.0),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn triplet_hinge() {
        let q = queue(&[(7, 0, vec![1.0, 0.0]), (8, 1, vec![0.0, 1.0])]);
        let v = l_triplet(&[1.0, 0.0], &[1.0, 0.0], &[7], 2, &q, 0.2).unwrap();
        close(v.value, 0.0, 1e-15);
        let v = l_triplet(&[0.0, 1.0], &[1.0, 0.0], &[7], 2, &q, 0.2).unwrap();
        close(v.value, 1.2, 1e-12);
    }
}
