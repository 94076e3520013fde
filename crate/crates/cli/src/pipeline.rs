//! In-memory building blocks shared by the subcommands and the acceptance
//! harness: data, teachers, the full method, baselines and evaluation.

use dflab_core::baselines::{self, capture_stats, ActivationStats, BaselineKind, Embedder};
use dflab_core::distill::{proxy_banks, train_crossx, CrossxOutput, Teachers, Toggles, TrainConfig, TrainReport};
use dflab_core::models::{train_teacher, LabeledImages, TeacherModel, TeacherReport};
use dflab_core::retrieval::Metrics;
use dflab_core::seed::{derive, derive_ints};
use dflab_core::synthmod::{build_class_specs, generate_from_specs, split, Modality, PairedDataset, RenderConfig};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn dataset_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    cfg.dataset.seed.unwrap_or_else(|| derive(seed, "dataset"))
}

pub fn split_seed(seed: u64) -> u64 {
    derive(seed, "split")
}

pub fn make_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<PairedDataset, CliError> {
    let s = dataset_seed(cfg, seed);
    let specs = build_class_specs(cfg.dataset.num_classes, s)?;
    Ok(generate_from_specs(&specs, cfg.dataset.per_class, cfg.dataset.pairing_mode, s, &cfg.dataset.render)?)
}

/// Same classes, independently rendered with other knobs.
pub fn make_variant(base: &PairedDataset, render: &RenderConfig, seed: u64) -> Result<PairedDataset, CliError> {
    let render = RenderConfig { size: base.render.size, ..render.clone() };
    Ok(generate_from_specs(&base.specs, base.per_class, base.pairing_mode, derive(seed, "variant_b"), &render)?)
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: PairedDataset,
    pub test: PairedDataset,
}

pub fn make_splits(cfg: &ExperimentConfig, dataset: &PairedDataset, seed: u64) -> Result<Splits, CliError> {
    let (train, test) = split(dataset, cfg.evaluation.test_fraction, split_seed(seed))?;
    Ok(Splits { train, test })
}

pub fn image_shape(cfg: &ExperimentConfig) -> [usize; 3] {
    [1, cfg.dataset.render.size, cfg.dataset.render.size]
}

/// Teacher of one modality trained on the classes in `classes` (all when `None`).
pub fn fit_teacher(
    cfg: &ExperimentConfig,
    splits: &Splits,
    modality: Modality,
    classes: Option<&[usize]>,
    seed: u64,
) -> Result<(TeacherModel, TeacherReport), CliError> {
    let (train, test) = match classes {
        Some(c) => (splits.train.filter_classes(c), splits.test.filter_classes(c)),
        None => (splits.train.clone(), splits.test.clone()),
    };
    let (tp, tl) = (train.stacked(modality), train.labels(modality));
    let (hp, hl) = (test.stacked(modality), test.labels(modality));
    let label = format!("teacher_{}", modality.name());
    let init = derive(seed, &label);
    let order = derive(seed, &format!("{label}_order"));
    Ok(train_teacher(
        &LabeledImages { pixels: &tp, labels: &tl },
        &LabeledImages { pixels: &hp, labels: &hl },
        &cfg.teacher.train,
        &cfg.model,
        image_shape(cfg),
        init,
        order,
    )?)
}

pub fn teacher_stats(teacher: &TeacherModel, splits: &Splits, modality: Modality) -> Result<ActivationStats, CliError> {
    let train = splits.train.filter_classes(teacher.class_ids());
    Ok(capture_stats(teacher, &train.stacked(modality))?)
}

pub fn distill_config(cfg: &ExperimentConfig, seed: u64, toggles: &Toggles) -> TrainConfig {
    TrainConfig { toggles: toggles.clone(), seed: derive(seed, "distill"), ..cfg.distill.clone() }
}

pub fn run_full(
    cfg: &ExperimentConfig,
    photo: &TeacherModel,
    sketch: &TeacherModel,
    toggles: &Toggles,
    seed: u64,
) -> (Result<CrossxOutput, CliError>, TrainReport) {
    let tc = distill_config(cfg, seed, toggles);
    let teachers = Teachers { photo, sketch };
    let (bp, bs) = match proxy_banks(teachers, cfg.model.embed_dim, tc.seed) {
        Ok(b) => b,
        Err(e) => return (Err(e.into()), TrainReport::default()),
    };
    let (out, report) = train_crossx(teachers, bp, bs, &cfg.model, &tc);
    (out.map_err(CliError::from), report)
}

pub fn encoders(out: &CrossxOutput) -> Embedder {
    Embedder::Encoders { photo: out.f_p.clone(), sketch: out.f_s.clone() }
}

/// Sketch queries against the photo gallery of `test`, restricted to `classes` when given.
pub fn evaluate(
    cfg: &ExperimentConfig,
    embedder: &Embedder,
    test: &PairedDataset,
    seed: u64,
    method: &str,
) -> Result<Metrics, CliError> {
    Ok(baselines::evaluate_embedder(
        embedder,
        &test.stacked(Modality::Photo),
        &test.labels(Modality::Photo),
        &test.stacked(Modality::Sketch),
        &test.labels(Modality::Sketch),
        cfg.evaluation.k,
        seed,
        method,
    )?)
}

pub fn run_baseline(
    cfg: &ExperimentConfig,
    kind: BaselineKind,
    photo: &TeacherModel,
    sketch: &TeacherModel,
    splits: &Splits,
    seed: u64,
) -> Result<Embedder, CliError> {
    let teachers = Teachers { photo, sketch };
    let tc = distill_config(cfg, seed, &cfg.distill.toggles);
    let tc = TrainConfig { seed: derive(tc.seed, kind.name()), ..tc };
    let train = &splits.train;
    Ok(match kind {
        BaselineKind::ClassifierOnly => baselines::run_classifier_only(photo, sketch),
        BaselineKind::WeightAverage => baselines::run_weight_average(photo, sketch)?,
        BaselineKind::UnimodalDistill => baselines::run_unimodal_distill(teachers, &cfg.model, &tc)?,
        BaselineKind::GaussianPrior => baselines::run_gaussian_prior(teachers, &cfg.model, &tc)?,
        BaselineKind::MetadataRecon => {
            let sp = teacher_stats(photo, splits, Modality::Photo)?;
            let ss = teacher_stats(sketch, splits, Modality::Sketch)?;
            baselines::run_metadata_recon(teachers, &sp, &ss, &cfg.model, &tc, &cfg.metadata)?
        }
        BaselineKind::DataDependent => baselines::run_data_dependent(
            teachers,
            &cfg.model,
            &tc,
            &train.stacked(Modality::Photo),
            &train.stacked(Modality::Sketch),
            &train.labels(Modality::Photo),
        )?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: usize,
    pub name: String,
    pub toggles: Toggles,
}

/// Four incremental rows, four leave-one-out rows, then the full method.
pub fn ablation_rows() -> Vec<AblationRow> {
    let t = |sem, align, modal, adv, enc| Toggles { sem, align, modal, adv, enc };
    let rows = [
        ("sem", t(true, false, false, false, false)),
        ("sem+align", t(true, true, false, false, false)),
        ("sem+align+modal", t(true, true, true, false, false)),
        ("sem+align+modal+adv", t(true, true, true, true, false)),
        ("no sem", t(false, true, true, true, true)),
        ("no align", t(true, false, true, true, true)),
        ("no modal", t(true, true, false, true, true)),
        ("no adv", t(true, true, true, false, true)),
        ("full", t(true, true, true, true, true)),
    ];
    rows.into_iter().enumerate().map(|(i, (name, toggles))| AblationRow { id: i + 1, name: name.into(), toggles }).collect()
}

/// Class sets of the photo and sketch teachers when a `fraction` of all
/// classes is shared; the rest is split evenly between the two sides.
pub fn overlap_classes(num_classes: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Config(format!("overlap fraction {fraction} outside (0, 1]")));
    }
    let shared = ((num_classes as f64 * fraction).round() as usize).clamp(1, num_classes);
    let key = derive_ints(derive(seed, "overlap"), &[shared as u64]);
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by_key(|&c| derive_ints(key, &[c as u64]));
    let (common, rest) = order.split_at(shared);
    let half = rest.len().div_ceil(2);
    let mut photo: Vec<usize> = common.iter().chain(&rest[..half]).copied().collect();
    let mut sketch: Vec<usize> = common.iter().chain(&rest[half..]).copied().collect();
    photo.sort_unstable();
    sketch.sort_unstable();
    if photo.len() < 2 || sketch.len() < 2 {
        return Err(CliError::Config(format!("overlap fraction {fraction} leaves a teacher with fewer than two classes")));
    }
    Ok((photo, sketch))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_sets_cover_the_universe() {
        for (f, shared) in [(1.0, 10), (0.8, 8), (0.6, 6)] {
            let (p, s) = overlap_classes(10, f, 3).unwrap();
            let common = p.iter().filter(|c| s.contains(c)).count();
            assert_eq!(common, shared);
            let mut all: Vec<usize> = p.iter().chain(&s).copied().collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
        assert!(overlap_classes(10, 0.0, 1).is_err());
        assert!(overlap_classes(10, 1.2, 1).is_err());
    }

    #[test]
    fn nine_rows_end_with_full() {
        let rows = ablation_rows();
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[8].toggles, Toggles::default());
        assert!(!rows[0].toggles.align && rows[0].toggles.sem);
        for (i, r) in rows[4..8].iter().enumerate() {
            let t = &r.toggles;
            let off = [t.sem, t.align, t.modal, t.adv].iter().filter(|b| !**b).count();
            assert_eq!(off, 1, "row {}", i + 5);
            assert!(t.enc);
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::NAN, 3.0]), 2.0);
    }
}
