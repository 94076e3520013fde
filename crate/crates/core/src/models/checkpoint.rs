//! Checkpoint files.
//!
//! ```text
//! magic   b"DFLCKPT1"                 8 bytes
//! hlen    u64 little-endian           length of the JSON header
//! header  UTF-8 JSON                  CheckpointHeader
//! params  num_params x f32 LE         Net parameter order (layer by layer, weights then bias)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_hash, EncoderModel, EstimatorModel, GuidanceModel, TeacherModel};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Net, Shape3};

const MAGIC: &[u8; 8] = b"DFLCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Estimator,
    Encoder,
    Guidance,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Estimator => "estimator",
            Role::Encoder => "encoder",
            Role::Guidance => "guidance",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub role: Role,
    pub input_shape: Shape3,
    pub layers: Vec<LayerSpec>,
    pub num_params: usize,
    pub param_sha256: String,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
}

impl Checkpoint {
    fn from_net(role: Role, net: &Net, seed: u64, epoch: usize, class_ids: Vec<usize>) -> Self {
        Self {
            header: CheckpointHeader {
                role,
                input_shape: net.input_shape(),
                layers: net.layers().to_vec(),
                num_params: net.num_params(),
                param_sha256: param_hash(net.params()),
                seed,
                epoch,
                class_ids,
                metrics: BTreeMap::new(),
            },
            params: net.params().to_vec(),
        }
    }

    pub fn teacher(t: &TeacherModel, seed: u64, epoch: usize) -> Self {
        Self::from_net(Role::Teacher, t.net(), seed, epoch, t.class_ids().to_vec())
    }

    pub fn estimator(g: &EstimatorModel, seed: u64, epoch: usize) -> Self {
        Self::from_net(Role::Estimator, g.net(), seed, epoch, Vec::new())
    }

    pub fn encoder(f: &EncoderModel, seed: u64, epoch: usize) -> Self {
        Self::from_net(Role::Encoder, f.net(), seed, epoch, Vec::new())
    }

    pub fn guidance(d: &GuidanceModel, seed: u64, epoch: usize) -> Self {
        Self::from_net(Role::Guidance, d.net(), seed, epoch, Vec::new())
    }

    pub fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.header.metrics.insert(key.to_string(), value);
        self
    }

    fn net(&self, expected: Role) -> Result<Net> {
        if self.header.role != expected {
            return Err(Error::RoleMismatch { expected: expected.name().into(), found: self.header.role.name().into() });
        }
        let mut net = Net::new(self.header.input_shape, self.header.layers.clone())?;
        net.set_params(&self.params)?;
        Ok(net)
    }

    pub fn into_teacher(self) -> Result<TeacherModel> {
        let net = self.net(Role::Teacher)?;
        TeacherModel::from_net(net, self.header.class_ids)
    }

    pub fn into_estimator(self) -> Result<EstimatorModel> {
        EstimatorModel::from_net(self.net(Role::Estimator)?)
    }

    pub fn into_encoder(self) -> Result<EncoderModel> {
        EncoderModel::from_net(self.net(Role::Encoder)?)
    }

    pub fn into_guidance(self) -> Result<GuidanceModel> {
        GuidanceModel::from_net(self.net(Role::Guidance)?)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&ck.header)?;
    let mut bytes = Vec::with_capacity(16 + header.len() + 4 * ck.params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in &ck.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::LoadFailure { path: path.to_path_buf(), reason };
    let bytes = fs::read(path).map_err(|e| fail(e.to_string()))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| fail("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
    let blob = &bytes[16 + hlen..];
    if blob.len() != 4 * header.num_params {
        return Err(fail(format!(
            "{} role with {} parameters expected, found {} bytes",
            header.role.name(),
            header.num_params,
            blob.len()
        )));
    }
    let params: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if param_hash(&params) != header.param_sha256 {
        return Err(fail("parameter hash mismatch".into()));
    }
    Ok(Checkpoint { header, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = TeacherModel::new(&ModelConfig::default(), [1, 32, 32], vec![0, 2, 5], 3).unwrap();
        t.freeze();
        let path = dir.path().join("t.ckpt");
        save_checkpoint(&Checkpoint::teacher(&t, 3, 20).with_metric("accuracy", 0.97), &path).unwrap();
        let back = load_checkpoint(&path).unwrap().into_teacher().unwrap();
        let x: Vec<f32> = (0..1024).map(|i| (i % 7) as f32 / 7.0).collect();
        assert_eq!(back.forward(&x, 1).unwrap().logits, t.forward(&x, 1).unwrap().logits);
        assert_eq!(back.class_ids(), &[0, 2, 5]);
        assert!(matches!(load_checkpoint(&path).unwrap().into_encoder(), Err(Error::RoleMismatch { .. })));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::LoadFailure { .. })));
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::LoadFailure { .. })));
    }
}
