//! Dot-product ranking of a photo gallery and the mAP@all / Prec@K metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    pub embeddings: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

impl Gallery {
    pub fn new(embeddings: Vec<f64>, dim: usize, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(invalid("gallery needs at least one row of positive width"));
        }
        if embeddings.len() != dim * labels.len() || ids.len() != labels.len() {
            return Err(invalid("gallery embeddings, labels and ids disagree in length"));
        }
        for (i, row) in embeddings.chunks(dim).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || (n - 1.0).abs() > 1e-4 {
                return Err(invalid(format!("gallery row {i} has norm {n}")));
            }
        }
        Ok(Self { embeddings, dim, labels, ids })
    }

    /// Builds from f32 unit rows with sequential ids.
    pub fn from_f32(embeddings: &[f32], dim: usize, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::new(embeddings.iter().map(|&v| v as f64).collect(), dim, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }
}

/// Gallery indices by descending `query . row`; ties keep ascending index.
pub fn rank(query: &[f64], gallery: &Gallery) -> Result<Vec<usize>> {
    if query.len() != gallery.dim {
        return Err(invalid(format!("query width {} against gallery width {}", query.len(), gallery.dim)));
    }
    let scores: Vec<f64> = (0..gallery.len()).map(|i| dot(query, gallery.row(i))).collect();
    let mut idx: Vec<usize> = (0..gallery.len()).collect();
    // Rows are finite, so partial_cmp is total here and -0.0 ties with 0.0.
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(idx)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedMetric("average precision with no relevant items".into()));
    }
    Ok(sum / hits as f64)
}

/// Fraction of relevant items among the first `min(k, n)`.
pub fn prec_at_k(relevance: &[bool], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    let m = k.min(relevance.len());
    if m == 0 {
        return Err(Error::UndefinedMetric("precision over an empty ranking".into()));
    }
    Ok(relevance[..m].iter().filter(|&&r| r).count() as f64 / m as f64)
}

fn relevance(query_label: usize, ranking: &[usize], gallery: &Gallery) -> Vec<bool> {
    ranking.iter().map(|&i| gallery.labels[i] == query_label).collect()
}

pub fn map_at_all(queries: &Gallery, gallery: &Gallery) -> Result<f64> {
    Ok(evaluate(queries, gallery, 1)?.map_at_all)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub rankings: Vec<Vec<usize>>,
    pub average_precision: Vec<f64>,
    pub precision_at_k: Vec<f64>,
    pub map_at_all: f64,
    pub prec_at_k: f64,
    pub k: usize,
}

/// Ranks the gallery for every query and aggregates both metrics.
pub fn evaluate(queries: &Gallery, gallery: &Gallery, k: usize) -> Result<RetrievalResult> {
    if queries.dim != gallery.dim {
        return Err(invalid("query and gallery embeddings differ in width"));
    }
    let mut out = RetrievalResult {
        rankings: Vec::with_capacity(queries.len()),
        average_precision: Vec::with_capacity(queries.len()),
        precision_at_k: Vec::with_capacity(queries.len()),
        map_at_all: 0.0,
        prec_at_k: 0.0,
        k,
    };
    for q in 0..queries.len() {
        let ranking = rank(queries.row(q), gallery)?;
        let rel = relevance(queries.labels[q], &ranking, gallery);
        out.average_precision.push(average_precision(&rel)?);
        out.precision_at_k.push(prec_at_k(&rel, k)?);
        out.rankings.push(ranking);
    }
    let n = queries.len() as f64;
    out.map_at_all = out.average_precision.iter().sum::<f64>() / n;
    out.prec_at_k = out.precision_at_k.iter().sum::<f64>() / n;
    Ok(out)
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map_at_all: f64,
    pub prec_at_k: f64,
    pub k: usize,
    pub n_queries: usize,
    pub n_gallery: usize,
    pub seed: u64,
    pub method: String,
}

impl Metrics {
    pub fn from_result(r: &RetrievalResult, n_gallery: usize, seed: u64, method: &str) -> Self {
        Self {
            map_at_all: r.map_at_all,
            prec_at_k: r.prec_at_k,
            k: r.k,
            n_queries: r.rankings.len(),
            n_gallery,
            seed,
            method: method.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: &[&[f64]]) -> Vec<f64> {
        rows.iter()
            .flat_map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(move |v| v / n)
            })
            .collect()
    }

    #[test]
    fn spec_examples() {
        assert!((average_precision(&[true, false, true]).unwrap() - 0.833_333_333_333).abs() < 1e-9);
        assert_eq!(average_precision(&[true; 4]).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, false, true, false]).unwrap(), 1.0 / 3.0);
        assert!(matches!(average_precision(&[false; 3]), Err(Error::UndefinedMetric(_))));
        assert_eq!(prec_at_k(&[true, false, true, false], 2).unwrap(), 0.5);
        assert_eq!(prec_at_k(&[true, false], 10).unwrap(), 0.5);
        assert_eq!(prec_at_k(&[true; 3], 7).unwrap(), 1.0);
    }

    #[test]
    fn ranking_order_and_ties() {
        let g = Gallery::new(unit_rows(&[&[0.1, 1.0], &[1.0, 0.1]]), 2, vec![0, 1], vec![0, 1]).unwrap();
        assert_eq!(rank(&[1.0, 0.0], &g).unwrap(), vec![1, 0]);
        let g = Gallery::new(unit_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]), 2, vec![0, 1, 2], vec![0, 1, 2]).unwrap();
        assert_eq!(rank(&[0.0, 1.0], &g).unwrap(), vec![0, 1, 2]);
        assert!(rank(&[1.0], &g).is_err());
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let e = unit_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let g = Gallery::new(e, 3, vec![4, 5, 6], vec![0, 1, 2]).unwrap();
        let r = evaluate(&g, &g, 20).unwrap();
        assert_eq!(r.map_at_all, 1.0);
        assert!((r.prec_at_k - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_unit_rows() {
        assert!(Gallery::new(vec![2.0, 0.0], 2, vec![0], vec![0]).is_err());
        assert!(Gallery::new(vec![f64::NAN, 0.0], 2, vec![0], vec![0]).is_err());
    }
}
