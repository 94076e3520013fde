//! Dataset directories and image previews.
//!
//! A dataset directory holds `meta.json` plus `photos.f32` and `sketches.f32`.
//! Each array file starts with a fixed header:
//!
//! ```text
//! magic   b"DFLARR01"            8 bytes
//! ndim    u32 little-endian      (always 4)
//! dims    ndim x u64 LE          N, C, H, W
//! data    N*C*H*W x f32 LE       row-major
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{apply_split, split_test_positions, Modality, ModalitySample, PairedDataset, PairingMode, RenderConfig, ShapeSpec};
use crate::error::{Error, Result};

const ARRAY_MAGIC: &[u8; 8] = b"DFLARR01";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModalityMeta {
    pub file: String,
    pub labels: Vec<usize>,
    pub instance_ids: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitMeta {
    pub test_fraction: f64,
    pub seed: u64,
    /// Test positions within each class block.
    pub test_positions: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub per_class: usize,
    pub pairing_mode: PairingMode,
    pub seed: u64,
    pub image_shape: [usize; 3],
    pub render: RenderConfig,
    pub specs: Vec<ShapeSpec>,
    pub photos: ModalityMeta,
    pub sketches: ModalityMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitMeta>,
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::LoadFailure { path: path.to_path_buf(), reason: reason.into() }
}

pub fn write_array(path: &Path, dims: [usize; 4], data: &[f32]) -> Result<()> {
    assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ARRAY_MAGIC)?;
    w.write_all(&4u32.to_le_bytes())?;
    for d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<([usize; 4], Vec<f32>)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| load_err(path, e.to_string()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| load_err(path, e.to_string()))?;
    if &magic != ARRAY_MAGIC {
        return Err(load_err(path, "bad array magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != 4 {
        return Err(load_err(path, "expected a 4-d array"));
    }
    let mut dims = [0usize; 4];
    let mut b8 = [0u8; 8];
    for d in &mut dims {
        r.read_exact(&mut b8)?;
        *d = u64::from_le_bytes(b8) as usize;
    }
    let n: usize = dims.iter().product();
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(load_err(path, format!("expected {} data bytes, found {}", n * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((dims, data))
}

/// Writes `dataset` to `dir`; `split` is recorded so importers can rebuild
/// the same train/test partition.
pub fn export_dataset(dataset: &PairedDataset, dir: &Path, split: Option<(f64, u64)>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let size = dataset.render.size;
    let mut written = Vec::new();
    let mut modality_meta = |m: Modality, file: &str| -> Result<ModalityMeta> {
        let samples = dataset.samples(m);
        let path = dir.join(file);
        write_array(&path, [samples.len(), 1, size, size], &dataset.stacked(m))?;
        written.push(path);
        Ok(ModalityMeta {
            file: file.to_string(),
            labels: samples.iter().map(|s| s.class_id.unwrap_or(usize::MAX)).collect(),
            instance_ids: samples.iter().map(|s| s.instance_id).collect(),
        })
    };
    let photos = modality_meta(Modality::Photo, "photos.f32")?;
    let sketches = modality_meta(Modality::Sketch, "sketches.f32")?;
    let split = match split {
        Some((test_fraction, seed)) => Some(SplitMeta {
            test_fraction,
            seed,
            test_positions: split_test_positions(dataset, test_fraction, seed)?,
        }),
        None => None,
    };
    let meta = DatasetMeta {
        num_classes: dataset.num_classes,
        per_class: dataset.per_class,
        pairing_mode: dataset.pairing_mode,
        seed: dataset.seed,
        image_shape: [1, size, size],
        render: dataset.render.clone(),
        specs: dataset.specs.clone(),
        photos,
        sketches,
        split,
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)?;
    written.insert(0, meta_path);
    Ok(written)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let bytes = fs::read(&path).map_err(|e| load_err(&path, e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| load_err(&path, e.to_string()))
}

pub fn import_dataset(dir: &Path) -> Result<(PairedDataset, Option<SplitMeta>)> {
    let meta = read_meta(dir)?;
    let size = meta.image_shape[1];
    let load = |m: Modality, mm: &ModalityMeta| -> Result<Vec<ModalitySample>> {
        let path = dir.join(&mm.file);
        let (dims, data) = read_array(&path)?;
        if dims != [mm.labels.len(), 1, size, size] || mm.instance_ids.len() != mm.labels.len() {
            return Err(load_err(&path, format!("array dims {dims:?} disagree with meta.json")));
        }
        Ok(data
            .chunks_exact(size * size)
            .zip(mm.labels.iter().zip(&mm.instance_ids))
            .map(|(px, (&label, &id))| ModalitySample {
                pixels: px.to_vec(),
                modality: m,
                class_id: (label != usize::MAX).then_some(label),
                instance_id: id,
            })
            .collect())
    };
    let dataset = PairedDataset {
        photos: load(Modality::Photo, &meta.photos)?,
        sketches: load(Modality::Sketch, &meta.sketches)?,
        pairing_mode: meta.pairing_mode,
        num_classes: meta.num_classes,
        per_class: meta.per_class,
        seed: meta.seed,
        specs: meta.specs,
        render: meta.render,
    };
    Ok((dataset, meta.split))
}

/// Loads a dataset directory and returns its recorded `(train, test)` split.
pub fn import_split(dir: &Path) -> Result<(PairedDataset, PairedDataset)> {
    let (dataset, split) = import_dataset(dir)?;
    let split = split.ok_or_else(|| load_err(&dir.join(META_FILE), "no split recorded"))?;
    Ok(apply_split(&dataset, &split.test_positions))
}

/// Tiles square grayscale images (values in `[0,1]`) into a binary PGM.
pub fn write_pgm_grid(path: &Path, images: &[f32], size: usize, columns: usize) -> Result<()> {
    let n = images.len() / (size * size);
    let columns = columns.max(1).min(n.max(1));
    let rows = n.div_ceil(columns).max(1);
    let (w, h) = (columns * (size + 1) + 1, rows * (size + 1) + 1);
    let mut canvas = vec![128u8; w * h];
    for k in 0..n {
        let (r, c) = (k / columns, k % columns);
        let img = &images[k * size * size..(k + 1) * size * size];
        for y in 0..size {
            for x in 0..size {
                let v = (img[y * size + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                canvas[(1 + r * (size + 1) + y) * w + 1 + c * (size + 1) + x] = v;
            }
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.write_all(&canvas)?;
    out.flush()?;
    Ok(())
}
