use dflab_core::distill::{proxy_banks, EncoderTrainer, PairPool, Teachers, TrainConfig};
use dflab_core::models::{init_encoder_from_teacher, ModelConfig, TeacherModel};
use rand::Rng;

fn trainer(cfg: &TrainConfig, steps: usize) -> (EncoderTrainer, TeacherModel) {
    let model = ModelConfig::default();
    let mut tp = TeacherModel::new(&model, [1, 32, 32], (0..10).collect(), 1).unwrap();
    let mut ts = TeacherModel::new(&model, [1, 32, 32], (0..10).collect(), 2).unwrap();
    tp.freeze();
    ts.freeze();
    let teachers = Teachers { photo: &tp, sketch: &ts };
    let (bp, bs) = proxy_banks(teachers, model.embed_dim, 3).unwrap();
    let f_p = init_encoder_from_teacher(&tp, model.embed_dim, 4).unwrap();
    let f_s = init_encoder_from_teacher(&ts, model.embed_dim, 5).unwrap();
    (EncoderTrainer::new(f_p, f_s, bp, bs, cfg, steps).unwrap(), tp)
}

fn random_pool(n: usize, classes: usize, seed: u64) -> PairPool {
    let mut rng = dflab_core::seed::rng(seed);
    let photos = (0..n * 1024).map(|_| rng.random::<f32>()).collect();
    let sketches = (0..n * 1024).map(|_| rng.random::<f32>()).collect();
    // Uneven class sizes so buckets wrap at different times.
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    PairPool::labeled(photos, sketches, 1024, labels, 0)
}

#[test]
fn two_hundred_steps_never_contrast_same_class() {
    let cfg = TrainConfig { batch_size: 8, queue_capacity: 8, ..Default::default() };
    cfg.validate(10).unwrap();
    let (mut tr, _) = trainer(&cfg, 200);
    let pool = random_pool(300, 10, 7);
    assert_eq!(pool.buckets().len(), 10);
    let terms = tr.run(&pool, &cfg, 200, false).unwrap();
    assert_eq!(terms.len(), 200);
    assert_eq!(tr.counter.same_class, 0);
    // Seven negatives per anchor once the queue is full.
    assert!(tr.counter.contrasts >= 199 * 8 * 7);
    assert!(terms.iter().all(|t| t.enc.is_finite() && t.metric.is_finite()));
}

#[test]
fn too_few_classes_is_surfaced() {
    let cfg = TrainConfig::default();
    let (mut tr, _) = trainer(&cfg, 10);
    let pool = random_pool(40, 5, 8);
    assert!(matches!(tr.run(&pool, &cfg, 10, false), Err(dflab_core::Error::SchedulingFailure(_))));
}
