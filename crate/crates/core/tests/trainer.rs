mod common;

use common::desk::*;
use glitchloc::annotations::Split;
use glitchloc::autodiff::Array;
use glitchloc::losses::{total_loss, LossParts, LossWeights, SampleTargets};
use glitchloc::model::{Checkpoint, Model, ModelConfig};
use glitchloc::postproc::NmsConfig;
use glitchloc::synthgen::FeatureClip;
use glitchloc::trainer::*;
use proptest::prelude::*;

fn batch_of(clips: &[&FeatureClip]) -> Vec<SampleTargets> {
    let m = ModelConfig::tiny();
    clips.iter().map(|c| SampleTargets::from_record(&c.record, m.d, m.t).unwrap()).collect()
}

fn one_step(model: &Model, clips: &[&FeatureClip], w: &LossWeights) -> (LossParts, Vec<Vec<f64>>) {
    let targets = batch_of(clips);
    let batch: Vec<_> = clips.iter().copied().zip(&targets).collect();
    batch_gradients(model, &batch, w).unwrap()
}

#[test]
fn one_step_is_bit_identical() {
    let data = tiny_dataset(1);
    let clips: Vec<&FeatureClip> = data.split(Split::Train).take(4).collect();
    let run = || {
        let mut state = TrainState::new(ModelConfig::tiny(), 5).unwrap();
        let (_, grads) = one_step(&state.model, &clips, &LossWeights::default());
        adam_step(state.model.params_mut().arrays_mut(), &grads, &mut state.adam, &AdamConfig::default()).unwrap();
        state.checkpoint().encode().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn frame_only_objective_leaves_boundary_branch_untouched() {
    let data = tiny_dataset(2);
    let clips: Vec<&FeatureClip> = data.split(Split::Train).take(4).collect();
    let model = Model::new(ModelConfig::tiny(), 9).unwrap();
    let w = LossWeights {
        lambda_c: 0.0,
        lambda_b: 0.0,
        lambda_bm: 0.0,
        ..LossWeights::default()
    };
    let (_, grads) = one_step(&model, &clips, &w);
    for (name, g) in model.params().names().iter().zip(&grads) {
        let zero = g.iter().all(|&x| x == 0.0);
        let boundary_side = name.starts_with("bnd_") || name.starts_with("fuse_");
        assert_eq!(zero, boundary_side, "{name}");
    }
}

#[test]
fn logged_totals_are_weighted_sums() {
    let data = tiny_dataset(4);
    let tr: Vec<&FeatureClip> = data.split(Split::Train).collect();
    let va: Vec<&FeatureClip> = data.split(Split::Validation).collect();
    let mut cfg = tiny_train(2);
    cfg.loss = LossWeights {
        lambda_c: 0.3,
        lambda_f: 1.5,
        lambda_b: 0.7,
        lambda_bm: 2.0,
        margin: 0.8,
    };
    let mut state = TrainState::new(ModelConfig::tiny(), 1).unwrap();
    let log = train(&mut state, &tr, &va, &cfg, &TrainOutputs::default()).unwrap();
    let mut steps = 0;
    for e in &log.entries {
        if let LogEntry::Step { contrastive, frame, boundary, multimodal, total, .. } = *e {
            let want = boundary * 0.7 + multimodal * 2.0 + frame * 1.5 + contrastive * 0.3;
            assert!((total - want).abs() <= 1e-12);
            let parts = LossParts { contrastive, frame, boundary, multimodal };
            assert_eq!(total_loss(&parts, &cfg.loss).unwrap(), total);
            steps += 1;
        }
    }
    assert_eq!(steps, 2 * 3);
    assert_eq!(log.epoch_losses().len(), 2);
    assert!(state.nms.is_some() && state.head.is_some());
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let data = tiny_dataset(6);
    let tr: Vec<&FeatureClip> = data.split(Split::Train).collect();
    let va: Vec<&FeatureClip> = data.split(Split::Validation).collect();
    let dir = tempfile::tempdir().unwrap();

    let mut straight = TrainState::new(ModelConfig::tiny(), 8).unwrap();
    let full_log = train(&mut straight, &tr, &va, &tiny_train(3), &TrainOutputs::default()).unwrap();

    let mut first = TrainState::new(ModelConfig::tiny(), 8).unwrap();
    let outputs = TrainOutputs { dir: Some(dir.path().to_path_buf()) };
    train(&mut first, &tr, &va, &tiny_train(1), &outputs).unwrap();
    let ck = Checkpoint::load(dir.path().join(CHECKPOINT_FILE)).unwrap();
    let mut resumed = TrainState::from_checkpoint(&ck, Some(&ModelConfig::tiny())).unwrap();
    let tail = train(&mut resumed, &tr, &va, &tiny_train(3), &outputs).unwrap();

    assert_eq!(resumed.model.params(), straight.model.params());
    assert_eq!(resumed.adam, straight.adam);
    assert_eq!(resumed.checkpoint().encode().unwrap(), straight.checkpoint().encode().unwrap());
    let n = tail.entries.len();
    assert_eq!(tail.entries[..], full_log.entries[full_log.entries.len() - n..]);
    let logged = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(logged, full_log.to_jsonl().unwrap());
}

#[test]
fn oracle_predictor_is_perfect_and_evaluation_repeats() {
    let data = tiny_dataset(7);
    let test: Vec<&FeatureClip> = data.split(Split::Test).chain(data.split(Split::Train)).collect();
    let m = ModelConfig::tiny();
    let oracle = OraclePredictor { d: m.d, t: m.t };
    let report = evaluate(&oracle, &test, &NmsConfig::default(), None, &InferenceConfig::default()).unwrap();
    assert_eq!(report.ap_at(0.5), Some(1.0));
    let model = Model::new(m, 2).unwrap();
    let a = evaluate(&model, &test, &NmsConfig::default(), None, &InferenceConfig::default()).unwrap();
    let b = evaluate(&model, &test, &NmsConfig::default(), None, &InferenceConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablation_rows_all_report() {
    let data = tiny_dataset(9);
    let tr: Vec<&FeatureClip> = data.split(Split::Train).collect();
    let va: Vec<&FeatureClip> = data.split(Split::Validation).collect();
    let te: Vec<&FeatureClip> = data.split(Split::Test).collect();
    let results = run_ablation(&LossSet::ROWS, &ModelConfig::tiny(), &tiny_train(1), &tr, &va, &te).unwrap();
    assert_eq!(results.len(), 6);
    for r in &results {
        assert!(r.report.ap_at(0.5).is_some_and(|v| (0.0..=1.0).contains(&v)), "{}", r.name);
        assert!(r.report.ar_at(10).is_some());
    }
}

fn scalar_adam(g: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
    let mut xs = Vec::new();
    for (k, &gk) in g.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * gk;
        v = b2 * v + (1.0 - b2) * gk * gk;
        let t = (k + 1) as i32;
        x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        xs.push(x);
    }
    xs
}

#[test]
fn adam_zero_gradient_only_decays_moments() {
    let mut params = vec![Array::full(&[3], 0.5)];
    let mut state = AdamState::new(&params);
    state.m[0] = vec![0.2; 3];
    state.v[0] = vec![0.1; 3];
    let before = params.clone();
    let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
    adam_step(&mut params, &[vec![0.0; 3]], &mut state, &cfg).unwrap();
    assert_eq!(params, before);
    assert!((state.m[0][0] - 0.18).abs() < 1e-15 && (state.v[0][0] - 0.0999).abs() < 1e-15);
    let mut fresh = vec![Array::full(&[3], 0.5)];
    let mut s = AdamState::new(&fresh);
    adam_step(&mut fresh, &[vec![0.0; 3]], &mut s, &AdamConfig::default()).unwrap();
    assert_eq!(fresh, before);
}

#[test]
fn adam_constant_gradient_moves_at_lr() {
    let mut params = vec![Array::zeros(&[1])];
    let mut state = AdamState::new(&params);
    let cfg = AdamConfig::default();
    let mut prev = 0.0;
    for _ in 0..2000 {
        adam_step(&mut params, &[vec![0.37]], &mut state, &cfg).unwrap();
        let x = params[0].data()[0];
        assert!(((prev - x) / cfg.lr - 1.0).abs() < 1e-6);
        prev = x;
    }
}

proptest! {
    #[test]
    fn adam_matches_scalar_reference(g in prop::collection::vec(-5.0f64..5.0, 1..30), lr in 1e-4f64..1e-1) {
        let mut params = vec![Array::zeros(&[1])];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        let want = scalar_adam(&g, lr);
        for (gk, w) in g.iter().zip(&want) {
            adam_step(&mut params, &[vec![*gk]], &mut state, &cfg).unwrap();
            prop_assert!((params[0].data()[0] - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }
}
