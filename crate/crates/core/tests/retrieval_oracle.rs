use dflab_core::retrieval::{evaluate, Gallery};
use rand::Rng;
use rand_distr::StandardNormal;

/// Double loop straight from the definitions: no sorting helpers shared
/// with the library.
fn oracle(queries: &Gallery, gallery: &Gallery, k: usize) -> (f64, f64) {
    let (mut map, mut prec) = (0.0, 0.0);
    for q in 0..queries.len() {
        let scores: Vec<f64> =
            (0..gallery.len()).map(|g| (0..gallery.dim).map(|d| queries.row(q)[d] * gallery.row(g)[d]).sum()).collect();
        // Position of g in the ranking = number of items strictly ahead of it.
        let position = |g: usize| {
            (0..gallery.len()).filter(|&h| scores[h] > scores[g] || (scores[h] == scores[g] && h < g)).count()
        };
        let mut relevant_ranks = Vec::new();
        let mut top_hits = 0;
        for g in 0..gallery.len() {
            let p = position(g);
            if gallery.labels[g] == queries.labels[q] {
                relevant_ranks.push(p + 1);
                if p < k {
                    top_hits += 1;
                }
            }
        }
        relevant_ranks.sort();
        let ap: f64 = relevant_ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>()
            / relevant_ranks.len() as f64;
        map += ap;
        prec += top_hits as f64 / k.min(gallery.len()) as f64;
    }
    (map / queries.len() as f64, prec / queries.len() as f64)
}

fn unit_rows(rng: &mut impl Rng, n: usize, dim: usize, coarse: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        // Coarse values produce exact score ties.
        let row: Vec<f64> = (0..dim)
            .map(|_| if coarse { rng.random_range(-1i32..=1) as f64 } else { rng.sample::<f64, _>(StandardNormal) })
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            out.extend((0..dim).map(|d| if d == 0 { 1.0 } else { 0.0 }));
        } else {
            out.extend(row.iter().map(|v| v / norm));
        }
    }
    out
}

#[test]
fn library_metrics_equal_naive_oracle() {
    let mut rng = dflab_core::seed::rng(2024);
    for case in 0..1000 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=10);
        let dim = rng.random_range(1..=6);
        let classes = rng.random_range(1..=5);
        let k = rng.random_range(1..=60);
        let coarse = case % 3 == 0;
        let g_labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        // Queries only from classes present in the gallery so AP is defined.
        let q_labels: Vec<usize> = (0..m).map(|_| g_labels[rng.random_range(0..n)]).collect();
        let gallery = Gallery::new(unit_rows(&mut rng, n, dim, coarse), dim, g_labels, (0..n as u64).collect()).unwrap();
        let queries = Gallery::new(unit_rows(&mut rng, m, dim, coarse), dim, q_labels, (0..m as u64).collect()).unwrap();
        let got = evaluate(&queries, &gallery, k).unwrap();
        let (map, prec) = oracle(&queries, &gallery, k);
        assert!((got.map_at_all - map).abs() <= 1e-12, "case {case}: mAP {} vs {map}", got.map_at_all);
        assert!((got.prec_at_k - prec).abs() <= 1e-12, "case {case}: Prec@K {} vs {prec}", got.prec_at_k);
    }
}
