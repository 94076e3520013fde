//! Experiment configuration file.

use std::path::{Path, PathBuf};

use dflab_core::baselines::MetadataConfig;
use dflab_core::distill::TrainConfig;
use dflab_core::models::{ModelConfig, TeacherConfig};
use dflab_core::synthmod::{PairingMode, RenderConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub num_classes: usize,
    pub per_class: usize,
    pub pairing_mode: PairingMode,
    /// Fixed dataset seed; derived from the master seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub render: RenderConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 300,
            pairing_mode: PairingMode::InstanceLevel,
            seed: None,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub train: TeacherConfig,
    /// Held-out accuracy below these floors is reported as a warning.
    pub photo_floor: f64,
    pub sketch_floor: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self { train: TeacherConfig::default(), photo_floor: 0.95, sketch_floor: 0.90 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// K of Prec@K.
    pub k: usize,
    pub test_fraction: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { k: 20, test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapSection {
    /// Fraction of classes known to both teachers, per sweep point.
    pub fractions: Vec<f64>,
}

impl Default for OverlapSection {
    fn default() -> Self {
        Self { fractions: vec![1.0, 0.8, 0.6] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossSection {
    /// Render knobs of the second dataset variant (sketch teacher).
    pub render: RenderConfig,
}

impl Default for CrossSection {
    fn default() -> Self {
        Self { render: RenderConfig { photo_noise: 0.45, sketch_jitter: 0.08, pose_jitter: 0.45, ..RenderConfig::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it by label.
    pub seed: u64,
    /// Seeds used by `ablate` and `sweep-overlap`.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub teacher: TeacherSection,
    /// `distill.seed` is ignored; the master seed decides.
    pub distill: TrainConfig,
    pub metadata: MetadataConfig,
    pub evaluation: EvaluationSection,
    pub overlap: OverlapSection,
    pub cross: CrossSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            seeds: vec![1, 2, 3],
            out: PathBuf::from("runs/reference"),
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            teacher: TeacherSection::default(),
            distill: TrainConfig::default(),
            metadata: MetadataConfig::default(),
            evaluation: EvaluationSection::default(),
            overlap: OverlapSection::default(),
            cross: CrossSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Commented TOML of the defaults, kept in the repository as `config.reference`.
    pub fn reference() -> String {
        let mut tree = toml::Value::try_from(Self::default()).expect("defaults serialise");
        shorten_floats(&mut tree);
        let body = toml::to_string(&tree).expect("defaults serialise");
        format!("# dflab experiment configuration: every key with its default value.\n# Unknown keys are rejected.\n\n{body}")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.dataset;
        if d.num_classes < 2 {
            return bad(format!("dataset.num_classes must be at least 2, got {}", d.num_classes));
        }
        if d.per_class < 2 {
            return bad("dataset.per_class must be at least 2".into());
        }
        let e = &self.evaluation;
        if !(e.test_fraction > 0.0 && e.test_fraction < 1.0) {
            return bad(format!("evaluation.test_fraction must lie in (0, 1), got {}", e.test_fraction));
        }
        if e.k == 0 {
            return bad("evaluation.k must be positive".into());
        }
        let n_test = (d.per_class as f64 * e.test_fraction).round() as usize;
        if n_test == 0 || n_test == d.per_class {
            return bad("evaluation.test_fraction leaves an empty train or test split".into());
        }
        if self.overlap.fractions.is_empty() {
            return bad("overlap.fractions is empty".into());
        }
        for &f in &self.overlap.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("overlap fraction {f} outside (0, 1]"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.teacher.train.epochs == 0 || self.teacher.train.batch_size == 0 {
            return bad("teacher epochs and batch_size must be positive".into());
        }
        if self.metadata.batch == 0 {
            return bad("metadata.batch must be positive".into());
        }
        self.model.validate([1, d.render.size, d.render.size]).map_err(|e| CliError::Config(e.to_string()))?;
        self.distill.validate(d.num_classes).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Prints f32-valued floats as `0.3` rather than `0.30000001192092896`.
fn shorten_floats(v: &mut toml::Value) {
    match v {
        toml::Value::Float(f) if *f == (*f as f32) as f64 => {
            *f = (*f as f32).to_string().parse().expect("f32 display parses");
        }
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| shorten_floats(v)),
        toml::Value::Array(a) => a.iter_mut().for_each(shorten_floats),
        _ => {}
    }
}
