mod common;

use common::*;
use glitchloc::annotations::{frame_labels, gt_boundary_map, Dataset, Modality, SegmentAnnotation, Track};
use glitchloc::synthgen::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        n_train: 16,
        n_validation: 4,
        n_test: 4,
        ..GeneratorConfig::default()
    }
}

fn rms_over(rows: &glitchloc::autodiff::Array, cols: &[usize]) -> f64 {
    let mut sum = 0.0;
    for r in 0..rows.rows() {
        for &c in cols {
            sum += rows.get2(r, c).powi(2);
        }
    }
    (sum / (rows.rows() * cols.len()) as f64).sqrt()
}

proptest! {
    #[test]
    fn single_budget_is_best_single(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lex = random_lexicon(&mut rng, 8);
        let words = random_words(&mut rng, 8, 12);
        let t = transcript(&words);
        let plan = select_replacements(&t, &lex, 1).unwrap();
        let single = best_single_replacement(&t, &lex);
        prop_assert_eq!(plan.replacements.first(), single.as_ref());
        prop_assert!(plan.replacements.len() <= 1);
    }

    #[test]
    fn pairs_never_lose_to_a_single(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lex = random_lexicon(&mut rng, 8);
        let words = random_words(&mut rng, 8, 12);
        let t = transcript(&words);
        let plan = select_replacements(&t, &lex, 2).unwrap();
        let single = best_single_replacement(&t, &lex).map_or(0.0, |r| r.delta.abs());
        prop_assert!(plan.total_delta().abs() >= single);
        let (value, ops) = oracle_theta(&words, &lex, 2);
        prop_assert_eq!(plan.total_delta().abs(), value);
        let got: Vec<(usize, String)> = plan.replacements.iter().map(|r| (r.index, r.replacement.clone())).collect();
        prop_assert_eq!(got, ops);
    }

    #[test]
    fn frame_labels_grow_with_segments(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rec = random_record(&mut rng, "r", 30, 6);
        rec.modify_visual = true;
        rec.fake_segments = vec![SegmentAnnotation { start: 0.4, end: 1.0 }];
        let before = frame_labels(&rec, Track::Only(Modality::Visual), 40).unwrap();
        let s = rng.gen_range(7..25);
        rec.fake_segments.push(SegmentAnnotation { start: s as f64 / 5.0, end: (s + 3) as f64 / 5.0 });
        let after = frame_labels(&rec, Track::Only(Modality::Visual), 40).unwrap();
        prop_assert!(before.values.iter().zip(&after.values).all(|(b, a)| a >= b));
    }

    #[test]
    fn labels_and_maps_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..20);
        let rec = random_record(&mut rng, "r", n, 6);
        for track in [Track::Shared, Track::Only(Modality::Visual), Track::Only(Modality::Audio)] {
            let labels = frame_labels(&rec, track, 20).unwrap();
            let map = gt_boundary_map(&rec, track, 6, 20).unwrap();
            let labels_zero = labels.values.iter().all(|&x| x == 0.0);
            let map_zero = map.array().data().iter().all(|&x| x == 0.0);
            prop_assert_eq!(labels_zero, map_zero);
            prop_assert!(labels.values[rec.n_frames..].iter().all(|&x| x == 0.0));
            if !map_zero {
                prop_assert_eq!(map.peaks(), rec.frame_segments());
            }
        }
    }

    #[test]
    fn fake_segment_loudness_matches_neighbours(seed in any::<u64>(), visual in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GeneratorConfig { seed, ..GeneratorConfig::default() };
        let mut rec = random_record(&mut rng, "clip", 48, 6);
        let len = rng.gen_range(1..=6);
        let a = rng.gen_range(2..48 - len - 2);
        rec.fake_segments = vec![SegmentAnnotation { start: a as f64 / 5.0, end: (a + len) as f64 / 5.0 }];
        rec.modify_visual = visual;
        rec.modify_audio = !visual;
        let clip = synthesize_clip(&rec, rng.gen(), &cfg).unwrap();
        let (s, e) = rec.frame_segments()[0];
        let seg: Vec<usize> = (s..e).collect();
        let near = neighbor_frames(s, e, 48, &[(s, e)]);
        let arr = if visual { &clip.visual } else { &clip.audio };
        let ratio = rms_over(arr, &seg) / rms_over(arr, &near);
        prop_assert!((0.9..=1.1).contains(&ratio), "ratio {}", ratio);
    }
}

#[test]
fn audio_only_fake_keeps_visual_untouched() {
    let cfg = GeneratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..20 {
        let mut rec = random_record(&mut rng, &format!("c{k}"), 40, 6);
        rec.fake_segments = vec![SegmentAnnotation { start: 2.0, end: 2.6 }];
        rec.modify_visual = false;
        rec.modify_audio = true;
        let identity = rng.gen();
        let fake = synthesize_clip(&rec, identity, &cfg).unwrap();
        let mut real_rec = rec.clone();
        real_rec.modify_audio = false;
        real_rec.fake_segments.clear();
        let real = synthesize_clip(&real_rec, identity, &cfg).unwrap();
        assert_eq!(fake.visual, real.visual);
        assert_ne!(fake.audio, real.audio);
        assert_eq!(real, synthesize_clip(&real_rec, identity, &cfg).unwrap());
    }
}

#[test]
fn segment_outside_clip_is_rejected() {
    let mut rec = random_record(&mut ChaCha8Rng::seed_from_u64(1), "c", 20, 4);
    rec.modify_visual = true;
    rec.fake_segments = vec![SegmentAnnotation { start: 5.0, end: 5.4 }];
    assert!(synthesize_clip(&rec, 9, &GeneratorConfig::default()).is_err());
}

#[test]
fn generated_dataset_round_trips_through_disk() {
    let cfg = small_config();
    let lex = SentimentLexicon::bundled();
    let data = generate_dataset(&cfg, &lex).unwrap();
    assert_eq!(data, generate_dataset(&cfg, &lex).unwrap());
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let manifest = Dataset::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, data.dataset().unwrap());
    let loaded = load_dataset(dir.path()).unwrap();
    let clips: Vec<&FeatureClip> = data.clips.iter().map(|c| &c.clip).collect();
    assert_eq!(loaded.clips.iter().collect::<Vec<_>>(), clips);
    for c in &data.clips {
        let rec = &c.clip.record;
        assert!(rec.n_frames <= cfg.t);
        for seg in &rec.fake_segments {
            assert!(seg.end - seg.start <= 1.6 + 1e-9);
        }
    }
}

#[test]
fn splits_use_disjoint_identities() {
    let data = generate_dataset(&small_config(), &SentimentLexicon::bundled()).unwrap();
    let ids = |split| -> std::collections::BTreeSet<u64> {
        data.clips.iter().filter(|c| c.clip.record.split == split).map(|c| c.identity).collect()
    };
    use glitchloc::annotations::Split;
    assert!(ids(Split::Train).is_disjoint(&ids(Split::Test)));
    assert!(ids(Split::Train).is_disjoint(&ids(Split::Validation)));
    assert!(ids(Split::Validation).is_disjoint(&ids(Split::Test)));
}
