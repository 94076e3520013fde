//! Subcommand bodies. Each stage writes into its own subdirectory of the
//! output directory and is recorded in `manifest.json`; a stage whose config,
//! inputs and artifacts are unchanged is skipped unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dflab_core::baselines::{BaselineKind, Embedder};
use dflab_core::distill::{EncoderLoss, Toggles, TrainConfig};
use dflab_core::models::{load_checkpoint, save_checkpoint, Checkpoint, TeacherModel};
use dflab_core::retrieval::Metrics;
use dflab_core::synthmod::io::{export_dataset, import_dataset, import_split, write_pgm_grid};
use dflab_core::synthmod::{Modality, PairedDataset};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::manifest::{config_hash, now_unix, Workspace};
use crate::pipeline::{self, Splits};
use crate::report::{self, AblationEntry, AblationReport, OverlapPoint, OverlapReport};
use crate::CliError;

pub const DATA_DIR: &str = "data";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const TEACHERS_FILE: &str = "teachers.json";

/// Resolved global options.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>, force: bool) -> Self {
        let seed = seed.unwrap_or(cfg.seed);
        let out = out.unwrap_or_else(|| cfg.out.clone());
        Self { cfg, seed, out, force }
    }

    fn hash<T: Serialize>(&self, stage: &str, extra: &T) -> String {
        config_hash(&(stage, &self.cfg, self.seed, extra))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: String,
    pub skipped: bool,
    pub artifacts: Vec<PathBuf>,
}

type Notes = BTreeMap<String, Value>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

fn save_ck(ck: &Checkpoint, path: PathBuf) -> Result<PathBuf, CliError> {
    save_checkpoint(ck, &path)?;
    Ok(path)
}

/// Runs `body` as stage `stage` in the fresh directory `rel`, unless the
/// manifest says it is current. `body` returns its artifacts and notes.
fn run_stage<T: Serialize>(
    ctx: &Context,
    stage: &str,
    rel: &str,
    extra: &T,
    inputs: &[PathBuf],
    body: impl FnOnce(&Path) -> Result<(Vec<PathBuf>, Notes), CliError>,
) -> Result<StageOutcome, CliError> {
    let mut ws = Workspace::open(&ctx.out)?;
    ws.manifest.stages.remove(&format!("{stage}-failed"));
    let hash = ctx.hash(stage, extra);
    if !ctx.force && ws.is_current(stage, &hash) {
        info!("{stage}: up to date in {}, skipping (use --force to rerun)", ctx.out.display());
        return Ok(StageOutcome { stage: stage.into(), skipped: true, artifacts: ws.artifacts(stage) });
    }
    let dir = ctx.out.join(rel);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    let dir = ws.dir(rel)?;
    let started = now_unix();
    info!("{stage}: running (seed {})", ctx.seed);
    let (artifacts, notes) = body(&dir)?;
    ws.record(stage, &hash, ctx.seed, started, inputs, &artifacts, notes)?;
    Ok(StageOutcome { stage: stage.into(), skipped: false, artifacts })
}

/// Rewrites a root-level summary file and its manifest entry.
fn write_summary<T: Serialize>(ctx: &Context, stage: &str, file: &str, value: &T, inputs: &[PathBuf]) -> Result<PathBuf, CliError> {
    let mut ws = Workspace::open(&ctx.out)?;
    let started = now_unix();
    let path = write_json(&ctx.out.join(file), value)?;
    let hash = config_hash(value);
    ws.record(stage, &hash, ctx.seed, started, inputs, std::slice::from_ref(&path), Notes::new())?;
    Ok(path)
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(ctx: &Context) -> Result<StageOutcome, CliError> {
    run_stage(ctx, "gen-data", DATA_DIR, &(), &[], |dir| {
        let dataset = pipeline::make_dataset(&ctx.cfg, ctx.seed)?;
        let split = (ctx.cfg.evaluation.test_fraction, pipeline::split_seed(ctx.seed));
        let files = export_dataset(&dataset, dir, Some(split))?;
        let mut notes = Notes::new();
        notes.insert("dataset_seed".into(), json!(dataset.seed));
        notes.insert("pairs".into(), json!(dataset.photos.len()));
        Ok((files, notes))
    })
}

fn data_inputs(ctx: &Context) -> Vec<PathBuf> {
    let dir = ctx.out.join(DATA_DIR);
    ["meta.json", "photos.f32", "sketches.f32"].iter().map(|f| dir.join(f)).collect()
}

pub fn load_splits(ctx: &Context) -> Result<Splits, CliError> {
    let dir = ctx.out.join(DATA_DIR);
    if !dir.join("meta.json").exists() {
        return Err(CliError::Config(format!("no dataset in {}; run gen-data first", dir.display())));
    }
    let (train, test) = import_split(&dir)?;
    Ok(Splits { train, test })
}

// ---------------------------------------------------------- train-teachers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityChoice {
    Photo,
    Sketch,
    Both,
}

impl ModalityChoice {
    fn modalities(self) -> Vec<Modality> {
        match self {
            ModalityChoice::Photo => vec![Modality::Photo],
            ModalityChoice::Sketch => vec![Modality::Sketch],
            ModalityChoice::Both => vec![Modality::Photo, Modality::Sketch],
        }
    }
}

pub fn teacher_dir(m: Modality) -> String {
    format!("teachers/{}", m.name())
}

pub fn teacher_path(ctx: &Context, m: Modality) -> PathBuf {
    ctx.out.join(teacher_dir(m)).join(format!("teacher_{}.ckpt", m.name()))
}

fn floor(ctx: &Context, m: Modality) -> f64 {
    match m {
        Modality::Photo => ctx.cfg.teacher.photo_floor,
        Modality::Sketch => ctx.cfg.teacher.sketch_floor,
    }
}

pub fn train_teachers(ctx: &Context, which: ModalityChoice) -> Result<Vec<StageOutcome>, CliError> {
    let splits = load_splits(ctx)?;
    let inputs = data_inputs(ctx);
    let mut outcomes = Vec::new();
    for m in which.modalities() {
        let stage = format!("train-teachers-{}", m.name());
        let o = run_stage(ctx, &stage, &teacher_dir(m), &(), &inputs, |dir| {
            let (teacher, rep) = pipeline::fit_teacher(&ctx.cfg, &splits, m, None, ctx.seed)?;
            let floor = floor(ctx, m);
            if rep.accuracy < floor {
                warn!("{} teacher held-out accuracy {:.4} is below the floor {floor}", m.name(), rep.accuracy);
            } else {
                info!("{} teacher held-out accuracy {:.4}", m.name(), rep.accuracy);
            }
            let epochs = ctx.cfg.teacher.train.epochs;
            let ck = Checkpoint::teacher(&teacher, ctx.seed, epochs).with_metric("accuracy", rep.accuracy);
            let ckpt = save_ck(&ck, dir.join(format!("teacher_{}.ckpt", m.name())))?;
            let stats = pipeline::teacher_stats(&teacher, &splits, m)?;
            let stats = write_json(&dir.join("stats.json"), &stats)?;
            let report = write_json(&dir.join("report.json"), &rep)?;
            let mut notes = Notes::new();
            notes.insert("accuracy".into(), json!(rep.accuracy));
            notes.insert("train_accuracy".into(), json!(rep.train_accuracy));
            notes.insert("below_floor".into(), json!(rep.accuracy < floor));
            Ok((vec![ckpt, stats, report], notes))
        })?;
        outcomes.push(o);
    }
    write_teacher_summary(ctx)?;
    Ok(outcomes)
}

fn write_teacher_summary(ctx: &Context) -> Result<(), CliError> {
    let ws = Workspace::open(&ctx.out)?;
    let mut summary = BTreeMap::new();
    let mut inputs = Vec::new();
    for m in [Modality::Photo, Modality::Sketch] {
        if let Some(rec) = ws.stage(&format!("train-teachers-{}", m.name())) {
            let mut entry = rec.notes.clone();
            entry.insert("floor".into(), json!(floor(ctx, m)));
            summary.insert(m.name(), entry);
            inputs.push(teacher_path(ctx, m));
        }
    }
    write_summary(ctx, "teachers-summary", TEACHERS_FILE, &summary, &inputs)?;
    Ok(())
}

pub fn load_teacher(ctx: &Context, m: Modality) -> Result<TeacherModel, CliError> {
    let path = teacher_path(ctx, m);
    if !path.exists() {
        return Err(CliError::Config(format!("missing {}; run train-teachers first", path.display())));
    }
    Ok(load_checkpoint(&path)?.into_teacher()?)
}

fn teacher_inputs(ctx: &Context) -> Vec<PathBuf> {
    vec![teacher_path(ctx, Modality::Photo), teacher_path(ctx, Modality::Sketch)]
}

// ---------------------------------------------------------------- train-dfl

/// Command-line overrides of the ablation toggles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToggleFlags {
    pub no_sem: bool,
    pub no_align: bool,
    pub no_modal: bool,
    pub no_adv: bool,
    pub no_enc: bool,
    pub encoder_loss: Option<EncoderLoss>,
}

impl ToggleFlags {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let t = &cfg.toggles;
        let toggles = Toggles {
            sem: t.sem && !self.no_sem,
            align: t.align && !self.no_align,
            modal: t.modal && !self.no_modal,
            adv: t.adv && !self.no_adv,
            enc: t.enc && !self.no_enc,
        };
        TrainConfig { toggles, encoder_loss: self.encoder_loss.unwrap_or(cfg.encoder_loss), ..cfg.clone() }
    }
}

/// Directory name of a distillation run: `full`, or the switched-off parts.
pub fn run_tag(cfg: &TrainConfig) -> String {
    let t = &cfg.toggles;
    let mut parts: Vec<&str> = [(t.sem, "no-sem"), (t.align, "no-align"), (t.modal, "no-modal"), (t.adv, "no-adv"), (t.enc, "no-enc")]
        .iter()
        .filter(|(on, _)| !on)
        .map(|&(_, name)| name)
        .collect();
    if t.enc && cfg.encoder_loss == EncoderLoss::Triplet {
        parts.push("triplet");
    }
    if parts.is_empty() {
        "full".into()
    } else {
        parts.join("+")
    }
}

pub fn dfl_dir(tag: &str) -> String {
    format!("dfl/{tag}")
}

pub fn train_dfl(ctx: &Context, flags: &ToggleFlags) -> Result<StageOutcome, CliError> {
    let tp = load_teacher(ctx, Modality::Photo)?;
    let ts = load_teacher(ctx, Modality::Sketch)?;
    let distill = flags.apply(&ctx.cfg.distill);
    let tag = run_tag(&distill);
    let stage = format!("train-dfl-{tag}");
    let size = ctx.cfg.dataset.render.size;
    run_stage(ctx, &stage, &dfl_dir(&tag), &distill, &teacher_inputs(ctx), |dir| {
        let cfg = ExperimentConfig { distill: distill.clone(), ..ctx.cfg.clone() };
        let (out, report) = pipeline::run_full(&cfg, &tp, &ts, &distill.toggles, ctx.seed);
        let mut files = vec![write_json(&dir.join("report.json"), &report)?];
        for s in &report.snapshots {
            let path = dir.join(format!("recon_epoch_{}.pgm", s.epoch));
            let mut images = s.photos.clone();
            images.extend_from_slice(&s.sketches);
            write_pgm_grid(&path, &images, size, distill.snapshot_count)?;
            files.push(path);
        }
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                // Keep what was written so the failure can be inspected.
                let mut ws = Workspace::open(&ctx.out)?;
                ws.record(&format!("{stage}-failed"), "", ctx.seed, now_unix(), &[], &files, Notes::new())?;
                return Err(e);
            }
        };
        let epoch = out.state.epoch;
        let seed = pipeline::distill_config(&cfg, ctx.seed, &distill.toggles).seed;
        files.push(save_ck(&Checkpoint::encoder(&out.f_p, seed, epoch), dir.join("encoder_photo.ckpt"))?);
        files.push(save_ck(&Checkpoint::encoder(&out.f_s, seed, epoch), dir.join("encoder_sketch.ckpt"))?);
        files.push(save_ck(&Checkpoint::estimator(&out.state.g_p, seed, epoch), dir.join("estimator_photo.ckpt"))?);
        files.push(save_ck(&Checkpoint::estimator(&out.state.g_s, seed, epoch), dir.join("estimator_sketch.ckpt"))?);
        files.push(save_ck(&Checkpoint::guidance(&out.state.d, seed, epoch), dir.join("guidance.ckpt"))?);
        let mut notes = Notes::new();
        notes.insert("teacher_hashes_unchanged".into(), json!(report.teacher_hashes_unchanged));
        notes.insert("same_class_contrasts".into(), json!(report.contrasts.same_class));
        Ok((files, notes))
    })
}

// ----------------------------------------------------------------- evaluate

fn check_label_space(embedder_classes: &[usize], test: &PairedDataset) -> Result<(), CliError> {
    let mut wanted: Vec<usize> = test.labels(Modality::Photo);
    wanted.extend(test.labels(Modality::Sketch));
    wanted.sort_unstable();
    wanted.dedup();
    let missing: Vec<usize> = wanted.iter().filter(|c| !embedder_classes.contains(c)).copied().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("test split has classes {missing:?} that the models do not know")))
    }
}

fn teacher_classes(tp: &TeacherModel, ts: &TeacherModel) -> Vec<usize> {
    let mut c: Vec<usize> = tp.class_ids().iter().chain(ts.class_ids()).copied().collect();
    c.sort_unstable();
    c.dedup();
    c
}

pub fn evaluate(ctx: &Context, method: &str, run: &str) -> Result<StageOutcome, CliError> {
    let splits = load_splits(ctx)?;
    let tp = load_teacher(ctx, Modality::Photo)?;
    let ts = load_teacher(ctx, Modality::Sketch)?;
    check_label_space(&teacher_classes(&tp, &ts), &splits.test)?;
    let (embedder, inputs, tag) = match method {
        "full" => {
            let dir = ctx.out.join(dfl_dir(run));
            let (p, s) = (dir.join("encoder_photo.ckpt"), dir.join("encoder_sketch.ckpt"));
            for f in [&p, &s] {
                if !f.exists() {
                    return Err(CliError::Config(format!("missing {}; run train-dfl first", f.display())));
                }
            }
            let photo = load_checkpoint(&p)?.into_encoder()?;
            let sketch = load_checkpoint(&s)?.into_encoder()?;
            let tag = if run == "full" { "full".to_string() } else { format!("full-{run}") };
            (Embedder::Encoders { photo, sketch }, vec![p, s], tag)
        }
        "classifier_only" => (Embedder::Representations { photo: tp, sketch: ts }, teacher_inputs(ctx), method.to_string()),
        other => return Err(CliError::Config(format!("unknown evaluation method {other:?}; use full or classifier_only"))),
    };
    let mut inputs = inputs;
    inputs.extend(data_inputs(ctx));
    let o = run_stage(ctx, &format!("evaluate-{tag}"), &format!("eval/{tag}"), &(), &inputs, |dir| {
        let m = pipeline::evaluate(&ctx.cfg, &embedder, &splits.test, ctx.seed, &tag)?;
        info!("{tag}: mAP@all {:.4}  Prec@{} {:.4}", m.map_at_all, m.k, m.prec_at_k);
        Ok((vec![write_json(&dir.join("metrics.json"), &m)?], Notes::new()))
    })?;
    write_comparison(ctx)?;
    Ok(o)
}

// ----------------------------------------------------------- train-baseline

pub fn train_baseline(ctx: &Context, kind: BaselineKind) -> Result<StageOutcome, CliError> {
    let splits = load_splits(ctx)?;
    let tp = load_teacher(ctx, Modality::Photo)?;
    let ts = load_teacher(ctx, Modality::Sketch)?;
    check_label_space(&teacher_classes(&tp, &ts), &splits.test)?;
    let mut inputs = teacher_inputs(ctx);
    inputs.extend(data_inputs(ctx));
    let name = kind.name();
    let o = run_stage(ctx, &format!("baseline-{name}"), &format!("baselines/{name}"), &(), &inputs, |dir| {
        let embedder = pipeline::run_baseline(&ctx.cfg, kind, &tp, &ts, &splits, ctx.seed)?;
        let m = pipeline::evaluate(&ctx.cfg, &embedder, &splits.test, ctx.seed, name)?;
        info!("{name}: mAP@all {:.4}  Prec@{} {:.4}", m.map_at_all, m.k, m.prec_at_k);
        Ok((vec![write_json(&dir.join("metrics.json"), &m)?], Notes::new()))
    })?;
    write_comparison(ctx)?;
    Ok(o)
}

/// `comparison.json`: every metrics file under `eval/` and `baselines/`, by method.
fn write_comparison(ctx: &Context) -> Result<(), CliError> {
    let mut rows: BTreeMap<String, Metrics> = BTreeMap::new();
    let mut inputs = Vec::new();
    for parent in ["eval", "baselines"] {
        let Ok(entries) = fs::read_dir(ctx.out.join(parent)) else { continue };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path().join("metrics.json")).collect();
        paths.sort();
        for p in paths {
            let Ok(bytes) = fs::read(&p) else { continue };
            let m: Metrics = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Runtime(format!("corrupt {}: {e}", p.display())))?;
            rows.insert(m.method.clone(), m);
            inputs.push(p);
        }
    }
    write_summary(ctx, "comparison", COMPARISON_FILE, &rows, &inputs)?;
    Ok(())
}

// ------------------------------------------------------------------- ablate

/// One seed's data split and teachers, built in memory.
struct SeedSetup {
    splits: Splits,
    photo: TeacherModel,
    sketch: TeacherModel,
}

fn seed_setup(cfg: &ExperimentConfig, seed: u64, dataset: Option<PairedDataset>) -> Result<SeedSetup, CliError> {
    let dataset = match dataset {
        Some(d) => d,
        None => pipeline::make_dataset(cfg, seed)?,
    };
    let splits = pipeline::make_splits(cfg, &dataset, seed)?;
    let (photo, _) = pipeline::fit_teacher(cfg, &splits, Modality::Photo, None, seed)?;
    let (sketch, _) = pipeline::fit_teacher(cfg, &splits, Modality::Sketch, None, seed)?;
    Ok(SeedSetup { splits, photo, sketch })
}

fn run_and_evaluate(
    cfg: &ExperimentConfig,
    photo: &TeacherModel,
    sketch: &TeacherModel,
    toggles: &Toggles,
    test: &PairedDataset,
    seed: u64,
    method: &str,
) -> Result<Metrics, CliError> {
    let (out, _) = pipeline::run_full(cfg, photo, sketch, toggles, seed);
    pipeline::evaluate(cfg, &pipeline::encoders(&out?), test, seed, method)
}

/// Runs the nine-row matrix over `cfg.seeds`. Row failures are recorded and the suite continues.
pub fn ablate(ctx: &Context) -> Result<StageOutcome, CliError> {
    let rows = pipeline::ablation_rows();
    run_stage(ctx, "ablate", "ablation", &(), &[], |dir| {
        let mut entries: Vec<AblationEntry> = rows
            .iter()
            .map(|r| AblationEntry {
                id: r.id,
                name: r.name.clone(),
                toggles: r.toggles.clone(),
                map_at_all: BTreeMap::new(),
                prec_at_k: BTreeMap::new(),
                errors: BTreeMap::new(),
                median_map: f64::NAN,
                median_prec: f64::NAN,
            })
            .collect();
        let mut files = Vec::new();
        for &seed in &ctx.cfg.seeds {
            let setup = seed_setup(&ctx.cfg, seed, None)?;
            for (r, e) in rows.iter().zip(entries.iter_mut()) {
                let method = format!("ablation-row{}", r.id);
                match run_and_evaluate(&ctx.cfg, &setup.photo, &setup.sketch, &r.toggles, &setup.splits.test, seed, &method) {
                    Ok(m) => {
                        info!("seed {seed} row {} ({}): mAP@all {:.4}", r.id, r.name, m.map_at_all);
                        let sub = dir.join(format!("seed_{seed}/row_{}", r.id));
                        fs::create_dir_all(&sub).map_err(|err| io_err(&sub, err))?;
                        files.push(write_json(&sub.join("metrics.json"), &m)?);
                        e.map_at_all.insert(seed, m.map_at_all);
                        e.prec_at_k.insert(seed, m.prec_at_k);
                    }
                    Err(err) => {
                        warn!("seed {seed} row {} ({}) failed: {err}", r.id, r.name);
                        e.errors.insert(seed, err.to_string());
                    }
                }
            }
        }
        entries.iter_mut().for_each(AblationEntry::finish);
        let rep = AblationReport { seeds: ctx.cfg.seeds.clone(), k: ctx.cfg.evaluation.k, rows: entries };
        files.push(write_json(&dir.join("ablation.json"), &rep)?);
        files.push(write_text(&dir.join("ablation.md"), &report::ablation_markdown(&rep))?);
        Ok((files, Notes::new()))
    })
}

// ------------------------------------------------------------ sweep-overlap

/// Per fraction and seed: teachers on the reduced class sets, the full
/// method, evaluation on the union of their classes.
pub fn sweep_overlap(ctx: &Context) -> Result<StageOutcome, CliError> {
    let fractions = ctx.cfg.overlap.fractions.clone();
    run_stage(ctx, "sweep-overlap", "overlap", &(), &[], |dir| {
        let mut points: Vec<OverlapPoint> = fractions
            .iter()
            .map(|&fraction| OverlapPoint {
                fraction,
                photo_classes: BTreeMap::new(),
                sketch_classes: BTreeMap::new(),
                map_at_all: BTreeMap::new(),
                prec_at_k: BTreeMap::new(),
                errors: BTreeMap::new(),
                median_map: f64::NAN,
            })
            .collect();
        let mut files = Vec::new();
        let toggles = ctx.cfg.distill.toggles.clone();
        for &seed in &ctx.cfg.seeds {
            let dataset = pipeline::make_dataset(&ctx.cfg, seed)?;
            let splits = pipeline::make_splits(&ctx.cfg, &dataset, seed)?;
            for p in points.iter_mut() {
                let (pc, sc) = pipeline::overlap_classes(ctx.cfg.dataset.num_classes, p.fraction, seed)?;
                let run = || -> Result<Metrics, CliError> {
                    let (photo, _) = pipeline::fit_teacher(&ctx.cfg, &splits, Modality::Photo, Some(&pc), seed)?;
                    let (sketch, _) = pipeline::fit_teacher(&ctx.cfg, &splits, Modality::Sketch, Some(&sc), seed)?;
                    let method = format!("overlap-{:.0}", p.fraction * 100.0);
                    let mut union = pc.clone();
                    union.extend(&sc);
                    union.sort_unstable();
                    union.dedup();
                    let test = splits.test.filter_classes(&union);
                    run_and_evaluate(&ctx.cfg, &photo, &sketch, &toggles, &test, seed, &method)
                };
                match run() {
                    Ok(m) => {
                        info!("seed {seed} overlap {:.0}%: mAP@all {:.4}", p.fraction * 100.0, m.map_at_all);
                        let sub = dir.join(format!("fraction_{:.0}/seed_{seed}", p.fraction * 100.0));
                        fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
                        files.push(write_json(&sub.join("metrics.json"), &m)?);
                        p.map_at_all.insert(seed, m.map_at_all);
                        p.prec_at_k.insert(seed, m.prec_at_k);
                    }
                    Err(e) => {
                        warn!("seed {seed} overlap {:.0}% failed: {e}", p.fraction * 100.0);
                        p.errors.insert(seed, e.to_string());
                    }
                }
                p.photo_classes.insert(seed, pc);
                p.sketch_classes.insert(seed, sc);
            }
        }
        for p in points.iter_mut() {
            p.median_map = pipeline::median(&p.map_at_all.values().copied().collect::<Vec<_>>());
        }
        let rep = OverlapReport { seeds: ctx.cfg.seeds.clone(), k: ctx.cfg.evaluation.k, points };
        files.push(write_json(&dir.join("overlap.json"), &rep)?);
        files.push(write_text(&dir.join("overlap.svg"), &report::overlap_svg(&rep))?);
        Ok((files, Notes::new()))
    })
}

// ----------------------------------------------------------- cross-teachers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    /// Photo teacher trained on variant A, sketch teacher on variant B.
    pub variant_a: Metrics,
    pub variant_b: Metrics,
    /// Both teachers from variant A, evaluated on A.
    pub same_dataset: Metrics,
    pub render_a: dflab_core::synthmod::RenderConfig,
    pub render_b: dflab_core::synthmod::RenderConfig,
}

/// Variant B is generated from the config unless `variant_b` names an
/// exported dataset directory, whose class specs must match variant A.
pub fn cross_teachers(ctx: &Context, variant_b: Option<&Path>) -> Result<StageOutcome, CliError> {
    let a = pipeline::make_dataset(&ctx.cfg, ctx.seed)?;
    let (b, inputs) = match variant_b {
        Some(dir) => {
            let (b, split) = import_dataset(dir)?;
            if split.is_none() {
                return Err(CliError::Config(format!("{} has no recorded split", dir.display())));
            }
            (b, vec![dir.join("meta.json")])
        }
        None => (pipeline::make_variant(&a, &ctx.cfg.cross.render, ctx.seed)?, vec![]),
    };
    if b.specs != a.specs || b.num_classes != a.num_classes {
        return Err(CliError::Config("variant B was generated for different class specs than variant A".into()));
    }
    if b.render.size != a.render.size {
        return Err(CliError::Config("variant B uses a different image size".into()));
    }
    let inputs_abs: Vec<PathBuf> = inputs.iter().map(|p| std::path::absolute(p).unwrap_or_else(|_| p.clone())).collect();
    run_stage(ctx, "cross-teachers", "cross", &variant_b.map(|p| p.display().to_string()), &inputs_abs, |dir| {
        let seed = ctx.seed;
        let sa = pipeline::make_splits(&ctx.cfg, &a, seed)?;
        let sb = match variant_b {
            Some(d) => {
                let (train, test) = import_split(d)?;
                Splits { train, test }
            }
            None => pipeline::make_splits(&ctx.cfg, &b, dflab_core::seed::derive(seed, "variant_b"))?,
        };
        let (photo, _) = pipeline::fit_teacher(&ctx.cfg, &sa, Modality::Photo, None, seed)?;
        let (sketch_b, _) = pipeline::fit_teacher(&ctx.cfg, &sb, Modality::Sketch, None, seed)?;
        let (sketch_a, _) = pipeline::fit_teacher(&ctx.cfg, &sa, Modality::Sketch, None, seed)?;
        let toggles = ctx.cfg.distill.toggles.clone();
        let (out, _) = pipeline::run_full(&ctx.cfg, &photo, &sketch_b, &toggles, seed);
        let emb = pipeline::encoders(&out?);
        let variant_a = pipeline::evaluate(&ctx.cfg, &emb, &sa.test, seed, "cross-variant-a")?;
        let variant_b = pipeline::evaluate(&ctx.cfg, &emb, &sb.test, seed, "cross-variant-b")?;
        let same_dataset = run_and_evaluate(&ctx.cfg, &photo, &sketch_a, &toggles, &sa.test, seed, "same-dataset")?;
        info!(
            "cross-teachers: mAP@all {:.4} on A, {:.4} on B, same-dataset {:.4}",
            variant_a.map_at_all, variant_b.map_at_all, same_dataset.map_at_all
        );
        let rep = CrossReport { variant_a, variant_b, same_dataset, render_a: a.render.clone(), render_b: b.render.clone() };
        Ok((vec![write_json(&dir.join("cross.json"), &rep)?], Notes::new()))
    })
}
