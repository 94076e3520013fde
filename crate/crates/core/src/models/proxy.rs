use std::collections::BTreeSet;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

/// Class proxies lifted from a teacher's final layer.
///
/// Row `slot` represents global class `class_order[slot]`. Similarity
/// computations always normalise rows first, so stored rows need not stay
/// unit-length while trainable rows are being optimised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    pub proxies: Vec<f64>,
    pub dim: usize,
    pub trainable_mask: Vec<bool>,
    pub class_order: Vec<usize>,
}

impl ProxyBank {
    pub fn new(proxies: Vec<f64>, dim: usize, class_order: Vec<usize>) -> Result<Self> {
        if dim == 0 || proxies.len() != dim * class_order.len() {
            return Err(invalid(format!(
                "proxy matrix of {} values does not hold {} rows of width {dim}",
                proxies.len(),
                class_order.len()
            )));
        }
        let n = class_order.len();
        Ok(Self { proxies, dim, trainable_mask: vec![false; n], class_order })
    }

    pub fn len(&self) -> usize {
        self.class_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_order.is_empty()
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.proxies[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn slot_of(&self, class_id: usize) -> Option<usize> {
        self.class_order.iter().position(|&c| c == class_id)
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.class_order.iter().copied().collect()
    }

    pub fn has_trainable(&self) -> bool {
        self.trainable_mask.iter().any(|&t| t)
    }

    /// Row-normalised copy of the proxy matrix.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = self.proxies.clone();
        for row in out.chunks_mut(self.dim) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
        }
        out
    }

    /// Rows permuted so that `class_order` becomes `order`.
    fn reordered(&self, order: &[usize]) -> Self {
        let mut proxies = Vec::with_capacity(order.len() * self.dim);
        let mut mask = Vec::with_capacity(order.len());
        for &c in order {
            let slot = self.slot_of(c).expect("class present");
            proxies.extend_from_slice(self.row(slot));
            mask.push(self.trainable_mask[slot]);
        }
        Self { proxies, dim: self.dim, trainable_mask: mask, class_order: order.to_vec() }
    }
}

/// Adds random trainable unit rows for each bank's missing classes and puts
/// both banks in the same (ascending) class order.
pub fn augment_proxies(
    bank_p: &ProxyBank,
    bank_s: &ProxyBank,
    missing_p: &BTreeSet<usize>,
    missing_s: &BTreeSet<usize>,
    seed: u64,
) -> Result<(ProxyBank, ProxyBank)> {
    if bank_p.dim != bank_s.dim {
        return Err(invalid("proxy banks have different widths"));
    }
    let known_p = bank_p.classes();
    let known_s = bank_s.classes();
    if !known_p.is_disjoint(missing_p) || !known_s.is_disjoint(missing_s) {
        return Err(invalid("missing classes overlap a bank's known classes"));
    }
    let universe_p: BTreeSet<usize> = known_p.union(missing_p).copied().collect();
    let universe_s: BTreeSet<usize> = known_s.union(missing_s).copied().collect();
    if universe_p != universe_s {
        return Err(invalid(format!("class universes differ: {universe_p:?} vs {universe_s:?}")));
    }
    let order: Vec<usize> = universe_p.into_iter().collect();
    let grow = |bank: &ProxyBank, missing: &BTreeSet<usize>, label: &str| -> ProxyBank {
        let mut rng = seed::rng(seed::derive(seed, label));
        let mut grown = bank.clone();
        for &c in missing {
            let mut row: Vec<f64> = (0..bank.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            grown.proxies.extend(row);
            grown.trainable_mask.push(true);
            grown.class_order.push(c);
        }
        grown.reordered(&order)
    };
    Ok((grow(bank_p, missing_p, "proxies_photo"), grow(bank_s, missing_s, "proxies_sketch")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(classes: &[usize], dim: usize) -> ProxyBank {
        let mut v = Vec::new();
        for &c in classes {
            for j in 0..dim {
                v.push(if j == c % dim { 1.0 } else { 0.0 });
            }
        }
        ProxyBank::new(v, dim, classes.to_vec()).unwrap()
    }

    #[test]
    fn augmentation_adds_trainable_rows_in_shared_order() {
        let p = bank(&[0, 1, 2, 3, 4, 5, 6, 7], 4);
        let s = bank(&(0..10).collect::<Vec<_>>(), 4);
        let (ap, as_) = augment_proxies(&p, &s, &BTreeSet::from([8, 9]), &BTreeSet::new(), 1).unwrap();
        assert_eq!(ap.len(), 10);
        assert_eq!(ap.trainable_mask.iter().filter(|&&t| t).count(), 2);
        assert_eq!(ap.class_order, as_.class_order);
        for slot in 8..10 {
            let n: f64 = ap.row(slot).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(!as_.has_trainable());
    }

    #[test]
    fn empty_missing_sets_only_reorder() {
        let p = bank(&[2, 0, 1], 3);
        let s = bank(&[0, 1, 2], 3);
        let (ap, as_) = augment_proxies(&p, &s, &BTreeSet::new(), &BTreeSet::new(), 1).unwrap();
        assert_eq!(ap.class_order, vec![0, 1, 2]);
        assert_eq!(ap.row(0), p.row(1));
        assert_eq!(as_, s);
    }

    #[test]
    fn inconsistent_universes_are_rejected() {
        let p = bank(&[0, 1], 2);
        let s = bank(&[0, 1, 2], 2);
        assert!(augment_proxies(&p, &s, &BTreeSet::new(), &BTreeSet::new(), 0).is_err());
        assert!(augment_proxies(&p, &s, &BTreeSet::from([1, 2]), &BTreeSet::new(), 0).is_err());
        assert!(augment_proxies(&p, &s, &BTreeSet::from([2]), &BTreeSet::new(), 0).is_ok());
    }
}
