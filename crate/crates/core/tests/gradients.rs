use dflab_core::distill::queue::{EmbeddingQueue, QueueEntry};
use dflab_core::losses::{self, finite_difference_check, LossValue, Side};
use dflab_core::models::ProxyBank;
use dflab_core::Result;
use rand::Rng;
use rand_distr::StandardNormal;

const POINTS: usize = 100;
const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-8;
const TOL: f64 = 1e-4;

type Rng8 = rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> Rng8 {
    rand::SeedableRng::seed_from_u64(seed)
}

fn gaussian(r: &mut Rng8, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

fn distributions(r: &mut Rng8, rows: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for _ in 0..rows {
        let z: Vec<f64> = gaussian(r, c).iter().map(|v| (1.5 * v).exp()).collect();
        let s: f64 = z.iter().sum();
        out.extend(z.iter().map(|v| 0.9 * v / s + 0.1 / c as f64));
    }
    out
}

fn worst<F>(seed: u64, mut point: F) -> f64
where
    F: FnMut(&mut Rng8) -> f64,
{
    let mut r = rng(seed);
    (0..POINTS).map(|_| point(&mut r)).fold(0.0, f64::max)
}

fn check<F: Fn(&[Vec<f64>]) -> Result<LossValue>>(f: F, args: Vec<Vec<f64>>) -> f64 {
    let r = finite_difference_check(f, &args, STEP, FLOOR).unwrap();
    r.max_rel_error()
}

#[test]
fn l_sem_gradients() {
    let e = worst(1, |r| {
        let (b, c, d) = (3, 5, 6);
        let y = distributions(r, b, c);
        let repr: Vec<f64> = gaussian(r, b * d).into_iter().map(|v| if v.abs() < 0.01 { 0.5 } else { v }).collect();
        check(|a| losses::l_sem(&a[0], c, &a[1], d, 0.7), vec![y, repr])
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn class_balance_gradients() {
    let e = worst(2, |r| check(|a| losses::class_balance(&a[0], 4), vec![distributions(r, 5, 4)]));
    assert!(e < TOL, "{e}");
}

#[test]
fn l_align_gradients() {
    let e = worst(3, |r| {
        let (p, s) = (distributions(r, 4, 5), distributions(r, 4, 5));
        check(|a| losses::l_align(&a[0], &a[1], 5), vec![p, s])
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn l_modal_gradients() {
    let e = worst(4, |r| {
        let d: Vec<f64> = (0..6).map(|_| r.random_range(0.02..0.98)).collect();
        let bits: Vec<f64> = (0..6).map(|_| r.random_range(0..2) as f64).collect();
        check(|a| losses::l_modal(&a[0], &bits), vec![d])
    });
    assert!(e < TOL, "{e}");
}

fn bank(rows: &[f64], dim: usize) -> ProxyBank {
    let c = rows.len() / dim;
    let mut b = ProxyBank::new(rows.to_vec(), dim, (0..c).collect()).unwrap();
    b.trainable_mask = vec![true; c];
    b
}

#[test]
fn l_metric_gradients() {
    let e = worst(5, |r| {
        let (n, c, d) = (6, 4, 5);
        let emb = gaussian(r, n * d);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let sides: Vec<Side> = (0..n).map(|i| if i % 2 == 0 { Side::Photo } else { Side::Sketch }).collect();
        let (kp, ks) = (gaussian(r, c * d), gaussian(r, c * d));
        check(
            |a| losses::l_metric(&a[0], d, &labels, &sides, &bank(&a[1], d), &bank(&a[2], d), 32.0, 0.1),
            vec![emb, kp, ks],
        )
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn l_adv_kl_gradients() {
    let e = worst(6, |r| {
        let (n, c, d) = (3, 4, 5);
        let emb: Vec<f64> = gaussian(r, n * d).iter().map(|v| v * 0.5).collect();
        let y = distributions(r, n, c);
        let k = gaussian(r, c * d);
        check(|a| losses::l_adv_kl(&a[0], d, &bank(&a[2], d), &a[1], 1.0), vec![emb, y, k])
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn l_enc_gradients() {
    let e = worst(7, |r| {
        let (n, d, extra) = (3, 5, 4);
        let unit = |v: Vec<f64>| {
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let sk: Vec<f64> = (0..n).flat_map(|_| unit(gaussian(r, d))).collect();
        let ph: Vec<f64> = (0..n).flat_map(|_| unit(gaussian(r, d))).collect();
        let mut q = EmbeddingQueue::new(n + extra);
        for i in 0..extra {
            q.push(QueueEntry { key: 100 + i as u64, class_id: i, embedding: unit(gaussian(r, d)) });
        }
        for i in 0..n {
            q.push(QueueEntry { key: i as u64, class_id: 10 + i, embedding: ph[i * d..(i + 1) * d].to_vec() });
        }
        let keys: Vec<u64> = (0..n as u64).collect();
        check(|a| losses::l_enc(&a[0], &a[1], &keys, d, &q, 0.07), vec![sk, ph])
    });
    assert!(e < TOL, "{e}");
}
