//! JSON summaries, the ablation markdown table and the overlap plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use dflab_core::distill::Toggles;
use serde::{Deserialize, Serialize};

use crate::pipeline::median;

/// One row of `ablation.json`. Seeds whose run failed carry the error instead of metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub id: usize,
    pub name: String,
    pub toggles: Toggles,
    pub map_at_all: BTreeMap<u64, f64>,
    pub prec_at_k: BTreeMap<u64, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<u64, String>,
    pub median_map: f64,
    pub median_prec: f64,
}

impl AblationEntry {
    pub fn finish(&mut self) {
        self.median_map = median(&self.map_at_all.values().copied().collect::<Vec<_>>());
        self.median_prec = median(&self.prec_at_k.values().copied().collect::<Vec<_>>());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub k: usize,
    pub rows: Vec<AblationEntry>,
}

fn mark(on: bool) -> &'static str {
    if on {
        "x"
    } else {
        ""
    }
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "n/a".into()
    }
}

pub fn ablation_markdown(r: &AblationReport) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = r.seeds.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(s, "# Ablation (median over seeds {})\n", seeds.join(", "));
    let _ = writeln!(s, "| row | name | sem | align | modal | adv | enc | mAP@all | Prec@{} |", r.k);
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for e in &r.rows {
        let t = &e.toggles;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            e.id,
            e.name,
            mark(t.sem),
            mark(t.align),
            mark(t.modal),
            mark(t.adv),
            if t.enc { "infonce" } else { "triplet" },
            cell(e.median_map),
            cell(e.median_prec)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPoint {
    pub fraction: f64,
    pub photo_classes: BTreeMap<u64, Vec<usize>>,
    pub sketch_classes: BTreeMap<u64, Vec<usize>>,
    pub map_at_all: BTreeMap<u64, f64>,
    pub prec_at_k: BTreeMap<u64, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<u64, String>,
    pub median_map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub seeds: Vec<u64>,
    pub k: usize,
    pub points: Vec<OverlapPoint>,
}

/// Median mAP against overlap, with per-seed dots.
pub fn overlap_svg(r: &OverlapReport) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let fs: Vec<f64> = r.points.iter().map(|p| p.fraction).collect();
    let (fmin, fmax) = fs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| (a.min(f), b.max(f)));
    let span = if fmax > fmin { fmax - fmin } else { 1.0 };
    let x = |f: f64| pad + (f - fmin) / span * (w - 2.0 * pad);
    let y = |m: f64| h - pad - m.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{t:.2}</text>"#, pad - 6.0, y(t) + 4.0);
    }
    for p in &r.points {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}%</text>"#, x(p.fraction), h - pad + 18.0, p.fraction * 100.0);
        for m in p.map_at_all.values() {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="gray"/>"#, x(p.fraction), y(*m));
        }
    }
    let line: Vec<String> = r
        .points
        .iter()
        .filter(|p| p.median_map.is_finite())
        .map(|p| format!("{:.1},{:.1}", x(p.fraction), y(p.median_map)))
        .collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, line.join(" "));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">class overlap</text>"#, w / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">median mAP@all</text>"#, h / 2.0, h / 2.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_has_nine_rows() {
        let rows = crate::pipeline::ablation_rows()
            .into_iter()
            .map(|r| {
                let mut e = AblationEntry {
                    id: r.id,
                    name: r.name,
                    toggles: r.toggles,
                    map_at_all: BTreeMap::from([(1, 0.5), (2, 0.7)]),
                    prec_at_k: BTreeMap::from([(1, 0.4)]),
                    errors: BTreeMap::new(),
                    median_map: 0.0,
                    median_prec: 0.0,
                };
                e.finish();
                e
            })
            .collect();
        let md = ablation_markdown(&AblationReport { seeds: vec![1, 2], k: 20, rows });
        assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| row")).count(), 9);
        assert!(md.contains("| 9 | full | x | x | x | x | infonce | 0.600 | 0.400 |"));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let p = |f: f64, m: f64| OverlapPoint {
            fraction: f,
            photo_classes: BTreeMap::new(),
            sketch_classes: BTreeMap::new(),
            map_at_all: BTreeMap::from([(1, m)]),
            prec_at_k: BTreeMap::new(),
            errors: BTreeMap::new(),
            median_map: m,
        };
        let svg = overlap_svg(&OverlapReport { seeds: vec![1], k: 20, points: vec![p(1.0, 0.5), p(0.6, 0.4)] });
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
