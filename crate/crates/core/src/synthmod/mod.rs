//! Procedural paired photo/sketch benchmark.
//!
//! Every class is a parametric star-shaped polygon. A *photo* is the filled,
//! sinusoidally textured shape over a noisy dark background; a *sketch* is a
//! one-pixel jittered outline of the same geometry on white. Instance geometry
//! (pose, scale, offset) is drawn from a per-instance seed shared by both
//! modalities, so instance-level pairs depict the same object.

pub mod io;

use std::f32::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Polygon,
    Ellipse,
    Star,
    Cross,
}

const FAMILIES: [Family; 4] = [Family::Polygon, Family::Ellipse, Family::Star, Family::Cross];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Photo,
    Sketch,
}

impl Modality {
    /// Modality bit used by the guidance objective (`1` for photos).
    pub fn bit(self) -> f64 {
        match self {
            Modality::Photo => 1.0,
            Modality::Sketch => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Photo => "photo",
            Modality::Sketch => "sketch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    InstanceLevel,
    ClassLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class_id: usize,
    pub family: Family,
    /// Vertex count (polygon), point count (star) or arm count (cross).
    pub vertices: usize,
    /// Minor/major axis ratio in (0, 1].
    pub aspect: f32,
    /// Base orientation in radians.
    pub rotation: f32,
    /// Centre of the photo foreground intensity band.
    pub fill: f32,
    /// Texture cycles per image width.
    pub texture_freq: f32,
}

impl ShapeSpec {
    /// Parameter vector `(vertices, aspect, rotation, fill, texture_freq)`.
    pub fn params(&self) -> [f32; 5] {
        [self.vertices as f32, self.aspect, self.rotation, self.fill, self.texture_freq]
    }

    /// Foreground intensity band of photo renderings.
    pub fn fill_band(&self) -> (f32, f32) {
        (self.fill - FILL_HALF_BAND, self.fill + FILL_HALF_BAND)
    }
}

const FILL_HALF_BAND: f32 = 0.1;
const TEXTURE_AMPLITUDE: f32 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySample {
    pub pixels: Vec<f32>,
    pub modality: Modality,
    pub class_id: Option<usize>,
    pub instance_id: u64,
}

/// Rendering knobs. Two variants with different knobs but the same class
/// specs model datasets collected independently for the same categories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub size: usize,
    /// Photo background is uniform in `[0, photo_noise]`.
    pub photo_noise: f32,
    /// Sketch vertex jitter, as a fraction of the image width.
    pub sketch_jitter: f32,
    /// Max absolute pose perturbation per instance, radians.
    pub pose_jitter: f32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { size: 32, photo_noise: 0.3, sketch_jitter: 0.05, pose_jitter: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub photos: Vec<ModalitySample>,
    pub sketches: Vec<ModalitySample>,
    pub pairing_mode: PairingMode,
    pub num_classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub specs: Vec<ShapeSpec>,
    pub render: RenderConfig,
}

impl PairedDataset {
    pub fn image_len(&self) -> usize {
        self.render.size * self.render.size
    }

    pub fn samples(&self, modality: Modality) -> &[ModalitySample] {
        match modality {
            Modality::Photo => &self.photos,
            Modality::Sketch => &self.sketches,
        }
    }

    /// Pixels of one modality concatenated into a batch.
    pub fn stacked(&self, modality: Modality) -> Vec<f32> {
        self.samples(modality).iter().flat_map(|s| s.pixels.iter().copied()).collect()
    }

    pub fn labels(&self, modality: Modality) -> Vec<usize> {
        self.samples(modality).iter().map(|s| s.class_id.unwrap_or(usize::MAX)).collect()
    }

    /// Keeps only samples whose class is in `classes` (both modalities).
    pub fn filter_classes(&self, classes: &[usize]) -> PairedDataset {
        let keep = |s: &&ModalitySample| s.class_id.is_some_and(|c| classes.contains(&c));
        PairedDataset {
            photos: self.photos.iter().filter(keep).cloned().collect(),
            sketches: self.sketches.iter().filter(keep).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn class_histogram(&self, modality: Modality) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for s in self.samples(modality) {
            if let Some(c) = s.class_id {
                h[c] += 1;
            }
        }
        h
    }
}

pub fn build_class_specs(num_classes: usize, seed: u64) -> Result<Vec<ShapeSpec>> {
    if num_classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {num_classes}")));
    }
    let mut rng = seed::rng(seed::derive(seed, "class_specs"));
    let mut specs: Vec<ShapeSpec> = Vec::with_capacity(num_classes);
    for class_id in 0..num_classes {
        let family = FAMILIES[class_id % FAMILIES.len()];
        let k = class_id / FAMILIES.len();
        let vertices = match family {
            Family::Polygon => 3 + k % 4,
            Family::Ellipse => 32,
            Family::Star => 4 + k % 3,
            Family::Cross => 3 + k % 3,
        };
        // Later members of a family differ in elongation once vertex counts repeat.
        let aspect = match family {
            Family::Ellipse => (0.95 - 0.2 * (k % 4) as f32).max(0.3),
            _ => 1.0 - 0.25 * ((k / 3) % 3) as f32,
        } - rng.random_range(0.0..0.05);
        let spec = ShapeSpec {
            class_id,
            family,
            vertices,
            aspect,
            rotation: rng.random_range(0.0..2.0 * PI),
            fill: rng.random_range(0.6..0.85),
            texture_freq: rng.random_range(1.0..4.0),
        };
        debug_assert!(specs.iter().all(|s| (s.family, s.params()) != (spec.family, spec.params())));
        specs.push(spec);
    }
    Ok(specs)
}

/// Per-instance pose shared by both modalities.
#[derive(Clone, Copy, Debug)]
struct Pose {
    rotation: f32,
    scale: f32,
    dx: f32,
    dy: f32,
}

impl Pose {
    fn draw(instance_seed: u64, cfg: &RenderConfig) -> Self {
        let mut rng = seed::rng(seed::derive(instance_seed, "pose"));
        let s = cfg.size as f32;
        Pose {
            rotation: rng.random_range(-cfg.pose_jitter..=cfg.pose_jitter),
            scale: rng.random_range(0.8..1.0),
            dx: rng.random_range(-0.06..0.06) * s,
            dy: rng.random_range(-0.06..0.06) * s,
        }
    }
}

/// Outline vertices in pixel coordinates, in angular order around the centre.
fn outline(spec: &ShapeSpec, pose: &Pose, size: usize) -> Vec<(f32, f32)> {
    let s = size as f32;
    let r = 0.34 * s * pose.scale;
    let mut polar: Vec<(f32, f32)> = Vec::new(); // (angle, radius)
    match spec.family {
        Family::Polygon | Family::Ellipse => {
            let n = spec.vertices;
            for i in 0..n {
                polar.push((2.0 * PI * i as f32 / n as f32, r));
            }
        }
        Family::Star => {
            let n = spec.vertices;
            for i in 0..2 * n {
                let rad = if i % 2 == 0 { r } else { 0.45 * r };
                polar.push((PI * i as f32 / n as f32, rad));
            }
        }
        Family::Cross => {
            let n = spec.vertices;
            let half_width = 0.22 * r;
            let outer = (r * r + half_width * half_width).sqrt();
            let spread = (half_width / r).atan();
            let inner = half_width / (PI / n as f32).sin();
            for i in 0..n {
                let theta = 2.0 * PI * i as f32 / n as f32;
                polar.push((theta - spread, outer));
                polar.push((theta + spread, outer));
                polar.push((theta + PI / n as f32, inner));
            }
        }
    }
    let rot = spec.rotation + pose.rotation;
    let (cx, cy) = (0.5 * s + pose.dx, 0.5 * s + pose.dy);
    polar
        .into_iter()
        .map(|(a, rad)| {
            // Elongate along the local x axis, then rotate into place.
            let (lx, ly) = (rad * a.cos(), rad * a.sin() * spec.aspect);
            let (c, sn) = (rot.cos(), rot.sin());
            (cx + lx * c - ly * sn, cy + lx * sn + ly * c)
        })
        .collect()
}

fn inside(poly: &[(f32, f32)], x: f32, y: f32) -> bool {
    let mut hit = false;
    let n = poly.len();
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
    }
    hit
}

/// Draws a closed one-pixel polyline with integer DDA; consecutive pixels are
/// 8-connected.
fn stroke(pixels: &mut [f32], size: usize, poly: &[(f32, f32)], ink: f32) {
    let n = poly.len();
    let clamp = |v: f32| v.round().clamp(0.0, size as f32 - 1.0) as i64;
    for i in 0..n {
        let (x0, y0) = (clamp(poly[i].0), clamp(poly[i].1));
        let (x1, y1) = (clamp(poly[(i + 1) % n].0), clamp(poly[(i + 1) % n].1));
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for t in 0..=steps {
            let x = x0 + (x1 - x0) * t / steps;
            let y = y0 + (y1 - y0) * t / steps;
            pixels[y as usize * size + x as usize] = ink;
        }
    }
}

fn render_with(spec: &ShapeSpec, modality: Modality, instance_seed: u64, cfg: &RenderConfig) -> Vec<f32> {
    let size = cfg.size;
    let pose = Pose::draw(instance_seed, cfg);
    let mut rng = seed::rng(seed::derive(instance_seed, modality.name()));
    match modality {
        Modality::Photo => {
            let poly = outline(spec, &pose, size);
            let phase = rng.random_range(0.0..2.0 * PI);
            let dir = spec.rotation + pose.rotation;
            let (dc, ds) = (dir.cos(), dir.sin());
            let mut px = vec![0.0f32; size * size];
            for y in 0..size {
                for x in 0..size {
                    let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                    px[y * size + x] = if inside(&poly, fx, fy) {
                        let t = 2.0 * PI * spec.texture_freq * (fx * dc + fy * ds) / size as f32 + phase;
                        spec.fill + TEXTURE_AMPLITUDE * t.sin()
                    } else {
                        rng.random_range(0.0..=cfg.photo_noise)
                    };
                }
            }
            px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            px
        }
        Modality::Sketch => {
            let sigma = cfg.sketch_jitter * size as f32;
            let jitter = Normal::new(0.0f32, sigma.max(1e-6)).unwrap();
            let poly: Vec<(f32, f32)> =
                outline(spec, &pose, size).into_iter().map(|(x, y)| (x + jitter.sample(&mut rng), y + jitter.sample(&mut rng))).collect();
            let mut px = vec![1.0f32; size * size];
            let ink = rng.random_range(0.0..0.15);
            stroke(&mut px, size, &poly, ink);
            px
        }
    }
}

/// Renders one sample at the default 32x32 resolution.
pub fn render_sample(spec: &ShapeSpec, modality: Modality, instance_seed: u64) -> ModalitySample {
    render_sample_with(spec, modality, instance_seed, &RenderConfig::default())
}

pub fn render_sample_with(spec: &ShapeSpec, modality: Modality, instance_seed: u64, cfg: &RenderConfig) -> ModalitySample {
    ModalitySample {
        pixels: render_with(spec, modality, instance_seed, cfg),
        modality,
        class_id: Some(spec.class_id),
        instance_id: instance_seed,
    }
}

pub fn instance_seed(dataset_seed: u64, class_id: usize, index: usize) -> u64 {
    seed::derive_ints(dataset_seed, &[class_id as u64, index as u64])
}

pub fn generate_dataset(num_classes: usize, per_class: usize, pairing_mode: PairingMode, seed: u64) -> Result<PairedDataset> {
    let specs = build_class_specs(num_classes, seed)?;
    generate_from_specs(&specs, per_class, pairing_mode, seed, &RenderConfig::default())
}

/// Renders a dataset for existing class specs, e.g. a second variant of the
/// same categories with a different seed and render knobs.
pub fn generate_from_specs(
    specs: &[ShapeSpec],
    per_class: usize,
    pairing_mode: PairingMode,
    seed: u64,
    render: &RenderConfig,
) -> Result<PairedDataset> {
    if per_class < 1 {
        return Err(invalid("per_class must be at least 1"));
    }
    if specs.len() < 2 {
        return Err(invalid("need at least 2 class specs"));
    }
    if render.size < 8 {
        return Err(invalid("image size must be at least 8"));
    }
    let num_classes = specs.len();
    let mut photos = Vec::with_capacity(num_classes * per_class);
    let mut sketches = Vec::with_capacity(num_classes * per_class);
    for spec in specs {
        let c = spec.class_id;
        for i in 0..per_class {
            let id = (c * per_class + i) as u64;
            let mut p = render_sample_with(spec, Modality::Photo, instance_seed(seed, c, i), render);
            p.instance_id = id;
            photos.push(p);
        }
        match pairing_mode {
            PairingMode::InstanceLevel => {
                for i in 0..per_class {
                    let mut s = render_sample_with(spec, Modality::Sketch, instance_seed(seed, c, i), render);
                    s.instance_id = (c * per_class + i) as u64;
                    sketches.push(s);
                }
            }
            PairingMode::ClassLevel => {
                // Sketch instances come from an unrelated seed stream, in shuffled order.
                let sketch_seed = seed::derive(seed, "class_level_sketches");
                let mut order: Vec<usize> = (0..per_class).collect();
                order.shuffle(&mut seed::rng(seed::derive_ints(sketch_seed, &[c as u64])));
                for i in order {
                    let mut s = render_sample_with(spec, Modality::Sketch, instance_seed(sketch_seed, c, i), render);
                    s.instance_id = (c * per_class + i) as u64;
                    sketches.push(s);
                }
            }
        }
    }
    Ok(PairedDataset {
        photos,
        sketches,
        pairing_mode,
        num_classes,
        per_class,
        seed,
        specs: specs.to_vec(),
        render: render.clone(),
    })
}

/// Per-class stratified split; returns `(train, test)`.
pub fn split(dataset: &PairedDataset, test_fraction: f64, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    let test_ids = split_test_positions(dataset, test_fraction, seed)?;
    Ok(apply_split(dataset, &test_ids))
}

/// Positions (within class) selected for the test split, one list per class.
pub(crate) fn split_test_positions(dataset: &PairedDataset, test_fraction: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n_test = (dataset.per_class as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == dataset.per_class {
        return Err(invalid(format!(
            "test_fraction {test_fraction} leaves an empty split with {} samples per class",
            dataset.per_class
        )));
    }
    let mut out = Vec::with_capacity(dataset.num_classes);
    for c in 0..dataset.num_classes {
        let mut idx: Vec<usize> = (0..dataset.per_class).collect();
        idx.shuffle(&mut seed::rng(seed::derive_ints(seed::derive(seed, "split"), &[c as u64])));
        let mut chosen = idx[..n_test].to_vec();
        chosen.sort_unstable();
        out.push(chosen);
    }
    Ok(out)
}

pub(crate) fn apply_split(dataset: &PairedDataset, test_positions: &[Vec<usize>]) -> (PairedDataset, PairedDataset) {
    let per_class = dataset.per_class;
    let n_test = test_positions.first().map_or(0, Vec::len);
    let pick = |samples: &[ModalitySample], test: bool| -> Vec<ModalitySample> {
        samples
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (c, pos) = (i / per_class, i % per_class);
                test_positions[c].binary_search(&pos).is_ok() == test
            })
            .map(|(_, s)| s.clone())
            .collect()
    };
    let make = |test: bool, pc: usize| PairedDataset {
        photos: pick(&dataset.photos, test),
        sketches: pick(&dataset.sketches, test),
        per_class: pc,
        ..dataset.clone()
    };
    (make(false, per_class - n_test), make(true, n_test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn class_specs_are_deterministic_and_distinct() {
        let a = build_class_specs(10, 7).unwrap();
        assert_eq!(a, build_class_specs(10, 7).unwrap());
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&build_class_specs(10, 7).unwrap()).unwrap());
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!((a[i].family, a[i].params()), (a[j].family, a[j].params()));
            }
        }
        let two = build_class_specs(2, 0).unwrap();
        assert!(two[0].family != two[1].family || two[0].params() != two[1].params());
        assert!(build_class_specs(1, 0).is_err());
    }

    #[test]
    fn rendering_is_deterministic_and_class_specific() {
        let specs = build_class_specs(4, 1).unwrap();
        for m in [Modality::Photo, Modality::Sketch] {
            assert_eq!(render_sample(&specs[0], m, 9), render_sample(&specs[0], m, 9));
        }
        assert_ne!(render_sample(&specs[0], Modality::Photo, 9).pixels, render_sample(&specs[1], Modality::Photo, 9).pixels);
    }

    fn dark_pixels_connected(px: &[f32], size: usize) -> bool {
        let dark: Vec<usize> = (0..px.len()).filter(|&i| px[i] < 0.5).collect();
        if dark.is_empty() {
            return false;
        }
        let set: HashSet<usize> = dark.iter().copied().collect();
        let mut seen = HashSet::from([dark[0]]);
        let mut stack = vec![dark[0]];
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / size) as i64, (i % size) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= size as i64 || nx >= size as i64 {
                        continue;
                    }
                    let j = ny as usize * size + nx as usize;
                    if set.contains(&j) && seen.insert(j) {
                        stack.push(j);
                    }
                }
            }
        }
        seen.len() == set.len()
    }

    #[test]
    fn sketches_are_mostly_white_with_a_connected_contour() {
        let specs = build_class_specs(20, 3).unwrap();
        for spec in &specs {
            for s in 0..5 {
                let px = render_sample(spec, Modality::Sketch, s).pixels;
                let white = px.iter().filter(|&&v| v > 0.9).count() as f64 / px.len() as f64;
                assert!(white >= 0.90, "class {} white fraction {white}", spec.class_id);
                assert!(dark_pixels_connected(&px, 32), "class {} contour broken", spec.class_id);
            }
        }
    }

    #[test]
    fn photos_have_banded_foreground_and_noisy_background() {
        let specs = build_class_specs(10, 3).unwrap();
        for spec in &specs {
            let pose = Pose::draw(5, &RenderConfig::default());
            let poly = outline(spec, &pose, 32);
            let px = render_sample(spec, Modality::Photo, 5).pixels;
            let (mut fg, mut bg) = (Vec::new(), Vec::new());
            for y in 0..32 {
                for x in 0..32 {
                    let v = px[y * 32 + x];
                    if inside(&poly, x as f32 + 0.5, y as f32 + 0.5) { fg.push(v) } else { bg.push(v) }
                }
            }
            let mean = fg.iter().sum::<f32>() / fg.len() as f32;
            let (lo, hi) = spec.fill_band();
            assert!(mean >= lo && mean <= hi, "fg mean {mean} outside [{lo},{hi}]");
            let bg_mean = bg.iter().sum::<f32>() / bg.len() as f32;
            let bg_var = bg.iter().map(|v| (v - bg_mean).powi(2)).sum::<f32>() / bg.len() as f32;
            assert!(bg_var > 1e-3 && bg.iter().all(|&v| v <= 0.3));
            let sketch_mean = render_sample(spec, Modality::Sketch, 5).pixels.iter().sum::<f32>() / 1024.0;
            let photo_mean = px.iter().sum::<f32>() / 1024.0;
            assert!(sketch_mean - photo_mean >= 0.2);
        }
    }

    #[test]
    fn instance_level_dataset_pairs_by_index() {
        let d = generate_dataset(10, 100, PairingMode::InstanceLevel, 1).unwrap();
        assert_eq!((d.photos.len(), d.sketches.len()), (1000, 1000));
        for (p, s) in d.photos.iter().zip(&d.sketches) {
            assert_eq!(p.class_id, s.class_id);
            assert_eq!(p.instance_id, s.instance_id);
            assert_eq!((p.modality, s.modality), (Modality::Photo, Modality::Sketch));
        }
        assert_eq!(d, generate_dataset(10, 100, PairingMode::InstanceLevel, 1).unwrap());
    }

    #[test]
    fn class_level_dataset_is_balanced() {
        let d = generate_dataset(10, 20, PairingMode::ClassLevel, 1).unwrap();
        assert_eq!(d.class_histogram(Modality::Photo), vec![20; 10]);
        assert_eq!(d.class_histogram(Modality::Sketch), vec![20; 10]);
        let inst = generate_dataset(10, 20, PairingMode::InstanceLevel, 1).unwrap();
        assert_ne!(d.sketches, inst.sketches);
    }

    #[test]
    fn split_is_stratified_disjoint_and_deterministic() {
        let d = generate_dataset(10, 100, PairingMode::InstanceLevel, 2).unwrap();
        let (train, test) = split(&d, 0.2, 11).unwrap();
        assert_eq!((train.photos.len(), test.photos.len()), (800, 200));
        assert_eq!((train.sketches.len(), test.sketches.len()), (800, 200));
        assert_eq!(train.class_histogram(Modality::Photo), vec![80; 10]);
        assert_eq!(test.class_histogram(Modality::Sketch), vec![20; 10]);
        let train_ids: HashSet<u64> = train.photos.iter().map(|s| s.instance_id).collect();
        assert!(test.photos.iter().all(|s| !train_ids.contains(&s.instance_id)));
        for (p, s) in test.photos.iter().zip(&test.sketches) {
            assert_eq!(p.instance_id, s.instance_id);
        }
        assert_eq!(split(&d, 0.2, 11).unwrap(), (train, test));
        assert!(split(&d, 0.0, 1).is_err());
        assert!(split(&d, 1.0, 1).is_err());
    }
}
