//! Synthetic content-driven forgeries at feature level.
//!
//! Each clip gets a time-aligned transcript. Fake clips replace up to `M`
//! sentiment-bearing words with antonyms chosen to maximise the change in
//! transcript sentiment; the replaced words' time spans become the fake
//! segments, and the manipulated modality receives a loudness-matched
//! perturbation there.

mod clip;
mod text;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use clip::{
    decode_clip, encode_clip, neighbor_frames, read_clip, synthesize_clip, write_clip, ClipHeader,
    FeatureClip,
};
pub use text::{
    best_single_replacement, replacement_budget, select_replacements, sentiment_score,
    ReplacementPlan, Replacement, SentimentLexicon, Token, Transcript,
};

use crate::annotations::{Dataset, SegmentAnnotation, Split, VideoRecord};
use crate::error::{Error, Result};

/// Relative weights of token durations of 1, 2, ... frames.
const TOKEN_FRAME_WEIGHTS: [f64; 8] = [3.0, 5.0, 5.0, 4.0, 0.5, 0.4, 0.3, 0.2];
/// Chance that a token is drawn from the sentiment-bearing vocabulary.
const SENTIMENT_RATE: f64 = 0.2;
/// Clips per speaker identity.
const CLIPS_PER_IDENTITY: usize = 4;

const FILLER: &[&str] = &[
    "the", "a", "we", "they", "this", "that", "is", "are", "was", "will", "be", "it", "today",
    "people", "said", "new", "policy", "vaccinations", "report", "city", "plan", "think", "very",
    "really", "about", "our", "team", "result", "market", "weather", "game", "idea", "week", "and",
    "of", "to", "in", "for", "news", "story",
];

/// FNV-1a over `label`, mixed into `seed` with a SplitMix64 finaliser.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub fps: f64,
    /// Clip length range in frames, inclusive.
    pub min_frames: usize,
    pub max_frames: usize,
    pub c_v: usize,
    pub f_m: usize,
    pub tau_a: usize,
    pub t: usize,
    pub d: usize,
    /// Perturbation RMS relative to the neighbouring real signal.
    pub perturbation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_validation: 100,
            n_test: 100,
            fps: 5.0,
            min_frames: 32,
            max_frames: 64,
            c_v: 8,
            f_m: 16,
            tau_a: 4,
            t: 64,
            d: 8,
            perturbation: 1.0,
            noise: 0.05,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.c_v, self.f_m, self.tau_a, self.t, self.d, self.min_frames];
        if positive.contains(&0) {
            return Err(Error::Config(format!("generator dimensions must be positive: {self:?}")));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.perturbation > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("generator fps, perturbation and noise must be positive".into()));
        }
        if self.min_frames > self.max_frames || self.max_frames > self.t {
            return Err(Error::Config(format!(
                "need min_frames <= max_frames <= t, got {} / {} / {}",
                self.min_frames, self.max_frames, self.t
            )));
        }
        if self.d > self.t || self.max_token_frames() == 0 {
            return Err(Error::Config("d must lie in [1, t] and allow a 0.1 s token".into()));
        }
        Ok(())
    }

    /// Longest token in frames: bounded by `D` and by 1.6 seconds.
    pub fn max_token_frames(&self) -> usize {
        let by_time = (1.6 * self.fps + 1e-9).floor() as usize;
        TOKEN_FRAME_WEIGHTS.len().min(self.d).min(by_time)
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Validation => self.n_validation,
            Split::Test => self.n_test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Real,
    VisualOnly,
    AudioOnly,
    Both,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Real, Category::VisualOnly, Category::AudioOnly, Category::Both];

    pub fn of(record: &VideoRecord) -> Category {
        match (record.modify_visual, record.modify_audio) {
            (false, false) => Category::Real,
            (true, false) => Category::VisualOnly,
            (false, true) => Category::AudioOnly,
            (true, true) => Category::Both,
        }
    }

    fn flags(self) -> (bool, bool) {
        match self {
            Category::Real => (false, false),
            Category::VisualOnly => (true, false),
            Category::AudioOnly => (false, true),
            Category::Both => (true, true),
        }
    }
}

/// A random transcript covering `n_frames` frames, with token boundaries on
/// the frame grid and at least one word that has an antonym.
pub fn random_transcript(
    rng: &mut ChaCha8Rng,
    n_frames: usize,
    cfg: &GeneratorConfig,
    lexicon: &SentimentLexicon,
) -> Transcript {
    let sentiment = lexicon.flippable_words();
    let max_len = cfg.max_token_frames();
    let weights = &TOKEN_FRAME_WEIGHTS[..max_len];
    let total: f64 = weights.iter().sum();
    let mut spans = Vec::new();
    let mut t = rng.gen_range(0..=2usize);
    loop {
        let mut pick = rng.gen_range(0.0..total);
        let mut len = 1;
        for (k, w) in weights.iter().enumerate() {
            if pick < *w {
                len = k + 1;
                break;
            }
            pick -= w;
        }
        if t + len > n_frames {
            break;
        }
        spans.push((t, t + len));
        t += len + rng.gen_range(0..=2usize);
    }
    if spans.is_empty() {
        spans.push((0, 1));
    }
    let mut words: Vec<&str> = spans
        .iter()
        .map(|_| {
            if !sentiment.is_empty() && rng.gen_bool(SENTIMENT_RATE) {
                *sentiment.choose(rng).expect("non-empty")
            } else {
                *FILLER.choose(rng).expect("non-empty")
            }
        })
        .collect();
    if !sentiment.is_empty() && !words.iter().any(|w| sentiment.contains(w)) {
        let k = rng.gen_range(0..words.len());
        words[k] = sentiment.choose(rng).expect("non-empty");
    }
    let tokens = spans
        .iter()
        .zip(words)
        .map(|(&(a, b), w)| Token {
            word: w.to_string(),
            start: a as f64 / cfg.fps,
            end: b as f64 / cfg.fps,
        })
        .collect();
    Transcript::new(tokens).expect("spans are sorted and disjoint")
}

/// One generated clip together with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedClip {
    pub clip: FeatureClip,
    pub transcript: Transcript,
    pub identity: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDataset {
    pub config: GeneratorConfig,
    /// Sorted by record id.
    pub clips: Vec<GeneratedClip>,
}

struct Spec {
    id: String,
    split: Split,
    category: Category,
    identity: u64,
}

fn plan_clip(spec: &Spec, cfg: &GeneratorConfig, lexicon: &SentimentLexicon) -> Result<GeneratedClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("text/{}", spec.id)));
    let n_frames = rng.gen_range(cfg.min_frames..=cfg.max_frames);
    let transcript = random_transcript(&mut rng, n_frames, cfg, lexicon);
    let mut record = VideoRecord {
        id: spec.id.clone(),
        fps: cfg.fps,
        n_frames,
        modify_visual: false,
        modify_audio: false,
        fake_segments: Vec::new(),
        split: spec.split,
        transcript_ops: None,
    };
    if spec.category != Category::Real {
        let budget = replacement_budget(record.duration())?;
        let plan = select_replacements(&transcript, lexicon, budget)?;
        if !plan.is_empty() {
            let (v, a) = spec.category.flags();
            record.modify_visual = v;
            record.modify_audio = a;
            record.fake_segments = plan
                .replacements
                .iter()
                .map(|r| {
                    let tok = &transcript.tokens()[r.index];
                    SegmentAnnotation {
                        start: tok.start,
                        end: tok.end,
                    }
                })
                .collect();
            record.transcript_ops = Some(plan.ops());
        }
    }
    let clip = synthesize_clip(&record, spec.identity, cfg)?;
    Ok(GeneratedClip {
        clip,
        transcript,
        identity: spec.identity,
    })
}

/// Generates all three splits. Categories are balanced within each split and
/// every split draws its speakers from its own identity pool.
pub fn generate_dataset(cfg: &GeneratorConfig, lexicon: &SentimentLexicon) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let mut specs = Vec::new();
    for split in [Split::Train, Split::Validation, Split::Test] {
        let n = cfg.count(split);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("categories/{}", split.as_str())));
        let mut cats: Vec<Category> = (0..n).map(|i| Category::ALL[i % 4]).collect();
        cats.shuffle(&mut rng);
        let identities = n.div_ceil(CLIPS_PER_IDENTITY).max(1);
        for (i, category) in cats.into_iter().enumerate() {
            let who = rng.gen_range(0..identities);
            specs.push(Spec {
                id: format!("{}-{i:05}", split.as_str()),
                split,
                category,
                identity: derive_seed(cfg.seed, &format!("identity/{}/{who}", split.as_str())),
            });
        }
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    let clips = specs
        .par_iter()
        .map(|s| plan_clip(s, cfg, lexicon))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedDataset {
        config: cfg.clone(),
        clips,
    })
}

pub const MANIFEST_FILE: &str = "annotations.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.json";
pub const GENERATOR_FILE: &str = "generator.json";
pub const CLIP_DIR: &str = "clips";

impl GeneratedDataset {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.clips.iter().map(|c| c.clip.record.clone()).collect())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FeatureClip> {
        self.clips
            .iter()
            .map(|c| &c.clip)
            .filter(move |c| c.record.split == split)
    }

    pub fn category_counts(&self, split: Option<Split>) -> BTreeMap<Category, usize> {
        let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
        for c in &self.clips {
            if split.map_or(true, |s| c.clip.record.split == s) {
                *out.entry(Category::of(&c.clip.record)).or_default() += 1;
            }
        }
        out
    }

    /// Writes the manifest, transcripts, generator settings and one clip file
    /// per record under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join(CLIP_DIR))?;
        self.dataset()?.save(dir.join(MANIFEST_FILE))?;
        let transcripts: BTreeMap<&str, &Transcript> = self
            .clips
            .iter()
            .map(|c| (c.clip.record.id.as_str(), &c.transcript))
            .collect();
        fs::write(dir.join(TRANSCRIPTS_FILE), serde_json::to_string_pretty(&transcripts)? + "\n")?;
        fs::write(dir.join(GENERATOR_FILE), serde_json::to_string_pretty(&self.config)? + "\n")?;
        for c in &self.clips {
            write_clip(clip_path(dir, &c.clip.record.id), &c.clip, self.config.f_m, self.config.tau_a)?;
        }
        Ok(())
    }
}

pub fn clip_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(CLIP_DIR).join(format!("{id}.glch"))
}

/// A dataset directory loaded back from disk.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub header: ClipHeader,
    pub clips: Vec<FeatureClip>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &FeatureClip> {
        self.clips.iter().filter(move |c| c.record.split == split)
    }
}

/// Reads the manifest and every clip file of a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LoadedDataset> {
    let dir = dir.as_ref();
    let dataset = Dataset::load(dir.join(MANIFEST_FILE))?;
    let mut header = None;
    let mut clips = Vec::with_capacity(dataset.len());
    for record in &dataset.records {
        let (h, clip) = read_clip(clip_path(dir, &record.id), record)?;
        if *header.get_or_insert(h) != h {
            return Err(Error::Format(format!("clip {} has header {h:?}, expected {header:?}", record.id)));
        }
        clips.push(clip);
    }
    let header = header.ok_or_else(|| Error::Format("dataset has no records".into()))?;
    Ok(LoadedDataset { header, clips })
}
