//! Command-line front end: `generate`, `train`, `eval`, `detect` and
//! `tune-nms`, all driven by one JSON run configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotations::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, CheckpointKind, CheckpointMeta, ModelConfig};
use crate::postproc::{proposals_to_jsonl, soft_nms, tune_nms, NmsConfig, ValidationVideo};
use crate::synthgen::{
    generate_dataset, load_dataset, read_clip, Category, FeatureClip, GeneratorConfig, LoadedDataset,
    SentimentLexicon,
};
use crate::trainer::{
    candidates, evaluate, ground_truth, run_inference, train, OraclePredictor, Predictor, TrainConfig,
    TrainOutputs, TrainState, CHECKPOINT_FILE,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const THREADS_ENV: &str = "GLITCHLOC_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory written by `generate` and read by the others.
    pub data: PathBuf,
    /// Run directory for checkpoints, logs and reports.
    pub run: PathBuf,
    /// Optional lexicon file replacing the bundled one.
    pub lexicon: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/desk"),
            run: PathBuf::from("runs/desk"),
            lexicon: None,
        }
    }
}

/// Every setting of a run in one document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub nms: NmsConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.nms.validate()?;
        let (g, m) = (&self.generator, &self.model);
        if (g.c_v, g.f_m, g.tau_a, g.t, g.d) != (m.c_v, m.f_m, m.tau_a, m.t, m.d) {
            return Err(Error::Config(format!(
                "generator dims (c_v {}, f_m {}, tau_a {}, t {}, d {}) disagree with model dims \
                 (c_v {}, f_m {}, tau_a {}, t {}, d {})",
                g.c_v, g.f_m, g.tau_a, g.t, g.d, m.c_v, m.f_m, m.tau_a, m.t, m.d
            )));
        }
        Ok(())
    }

    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides and the seed, then validates.
    pub fn resolve(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for s in sets {
            apply_override(&mut doc, s)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("config schema: {e}")))?;
        if let Some(seed) = seed {
            cfg.generator.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets a dotted path such as `train.adam.lr=0.002`. The value is parsed as
/// JSON when possible, else taken as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: {part:?} is not inside a section")))?;
        if k + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("--set needs a non-empty key".into()))
}

#[derive(Debug, Parser)]
#[command(name = "glitchloc", version, about = "Temporal forgery localization on synthetic audio-visual features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides both the generator and the training seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output location (directory or file, depending on the command).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(#[command(flatten)] Common),
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Write a ground-truth emitter checkpoint instead of training.
        #[arg(long, conflicts_with = "resume")]
        oracle: bool,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Detect forged segments in one clip file.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        clip: PathBuf,
    },
    /// Choose Soft-NMS settings on the validation split.
    TuneNms {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a pool may already exist when embedded; that is not an error here
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(c) => {
            let cfg = RunConfig::resolve(c.config.as_deref(), &c.sets, c.seed)?;
            let out = c.out.unwrap_or_else(|| cfg.paths.data.clone());
            print!("{}", cmd_generate(&cfg, &out)?);
            Ok(())
        }
        Command::Train { common: c, resume, oracle } => {
            let cfg = RunConfig::resolve(c.config.as_deref(), &c.sets, c.seed)?;
            let out = c.out.unwrap_or_else(|| cfg.paths.run.clone());
            if oracle {
                fs::create_dir_all(&out)?;
                let path = out.join(CHECKPOINT_FILE);
                oracle_checkpoint(&cfg.model, cfg.nms).save(&path)?;
                println!("wrote oracle checkpoint {}", path.display());
                return Ok(());
            }
            let state = cmd_train(&cfg, &out, resume.as_deref())?;
            println!(
                "trained {} epochs ({} steps); checkpoint {}",
                state.epoch,
                state.adam.step,
                out.join(CHECKPOINT_FILE).display()
            );
            Ok(())
        }
        Command::Eval { common: c, checkpoint, split } => {
            let cfg = RunConfig::resolve(c.config.as_deref(), &c.sets, c.seed)?;
            let ck = checkpoint.unwrap_or_else(|| cfg.paths.run.join(CHECKPOINT_FILE));
            let out = c.out.unwrap_or_else(|| cfg.paths.run.join(format!("eval-{}.json", split.as_str())));
            print!("{}", cmd_eval(&cfg, &ck, split, &out)?);
            Ok(())
        }
        Command::Detect { common: c, checkpoint, clip } => {
            let cfg = RunConfig::resolve(c.config.as_deref(), &c.sets, c.seed)?;
            let ck = checkpoint.unwrap_or_else(|| cfg.paths.run.join(CHECKPOINT_FILE));
            let lines = cmd_detect(&cfg, &ck, &clip)?;
            match c.out {
                Some(p) => fs::write(p, lines)?,
                None => print!("{lines}"),
            }
            Ok(())
        }
        Command::TuneNms { common: c, checkpoint } => {
            let cfg = RunConfig::resolve(c.config.as_deref(), &c.sets, c.seed)?;
            let ck = checkpoint.unwrap_or_else(|| cfg.paths.run.join(CHECKPOINT_FILE));
            let chosen = cmd_tune_nms(&cfg, &ck)?;
            let text = serde_json::to_string_pretty(&chosen)? + "\n";
            if let Some(p) = c.out {
                fs::write(p, &text)?;
            }
            print!("{text}");
            Ok(())
        }
    }
}

fn lexicon(cfg: &RunConfig) -> Result<SentimentLexicon> {
    match &cfg.paths.lexicon {
        Some(p) => SentimentLexicon::load(p),
        None => Ok(SentimentLexicon::bundled()),
    }
}

/// Segment-length bins of 0.2 s up to 1.6 s.
const HIST_BINS: usize = 8;

/// Writes the dataset and returns a printable summary.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = generate_dataset(&cfg.generator, &lexicon(cfg)?)?;
    data.write(out)?;
    let mut text = format!("wrote {} records to {}\n", data.clips.len(), out.display());
    for split in [Split::Train, Split::Validation, Split::Test] {
        let counts = data.category_counts(Some(split));
        let n: usize = counts.values().sum();
        if n == 0 {
            continue;
        }
        text.push_str(&format!("{:<11}", split.as_str()));
        for c in Category::ALL {
            let k = counts[&c];
            text.push_str(&format!(" {:?} {k} ({:.1}%)", c, 100.0 * k as f64 / n as f64));
        }
        text.push('\n');
    }
    let mut hist = [0usize; HIST_BINS];
    let mut total = 0;
    for c in &data.clips {
        for s in &c.clip.record.fake_segments {
            let bin = (((s.end - s.start) / 0.2 - 1e-9).floor().max(0.0) as usize).min(HIST_BINS - 1);
            hist[bin] += 1;
            total += 1;
        }
    }
    text.push_str(&format!("segment lengths ({total} segments)\n"));
    for (k, n) in hist.iter().enumerate() {
        let share = if total == 0 { 0.0 } else { *n as f64 / total as f64 };
        text.push_str(&format!(
            "  ({:.1}, {:.1}] s {:>5} {}\n",
            0.2 * k as f64,
            0.2 * (k + 1) as f64,
            n,
            "#".repeat((share * 50.0).round() as usize)
        ));
    }
    Ok(text)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} {} not found", path.display())))
    }
}

fn load_data(cfg: &RunConfig) -> Result<LoadedDataset> {
    require_file(&cfg.paths.data.join(crate::synthgen::MANIFEST_FILE), "dataset manifest")?;
    let data = load_dataset(&cfg.paths.data)?;
    let m = &cfg.model;
    let h = data.header;
    if (h.c_v, h.f_m, h.tau_a, h.t) != (m.c_v, m.f_m, m.tau_a, m.t) {
        return Err(Error::Config(format!("dataset header {h:?} does not match the model config")));
    }
    Ok(data)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainState> {
    let data = load_data(cfg)?;
    let tr: Vec<&FeatureClip> = data.split(Split::Train).collect();
    let va: Vec<&FeatureClip> = data.split(Split::Validation).collect();
    let mut state = match resume {
        Some(p) => TrainState::from_checkpoint(&Checkpoint::load(p)?, Some(&cfg.model))?,
        None => TrainState::new(cfg.model.clone(), cfg.train.seed)?,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    train(&mut state, &tr, &va, &cfg.train, &TrainOutputs { dir: Some(out.to_path_buf()) })?;
    Ok(state)
}

pub fn oracle_checkpoint(model: &ModelConfig, nms: NmsConfig) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            kind: CheckpointKind::Oracle,
            model: model.clone(),
            epoch: 0,
            step: 0,
            seed: 0,
            nms: Some(nms),
        },
        arrays: Vec::new(),
    }
}

/// A loaded checkpoint ready for inference.
pub struct Loaded {
    pub predictor: Box<dyn Predictor>,
    pub state: Option<TrainState>,
    pub nms: Option<NmsConfig>,
}

pub fn load_predictor(path: &Path, expected: &ModelConfig) -> Result<Loaded> {
    require_file(path, "checkpoint")?;
    let ck = Checkpoint::load(path)?;
    if ck.meta.model != *expected {
        return Err(Error::Config(format!(
            "checkpoint {} was built for {:?}, config asks for {:?}",
            path.display(),
            ck.meta.model,
            expected
        )));
    }
    Ok(match ck.meta.kind {
        CheckpointKind::Oracle => Loaded {
            predictor: Box::new(OraclePredictor {
                d: expected.d,
                t: expected.t,
            }),
            state: None,
            nms: ck.meta.nms,
        },
        CheckpointKind::Model => {
            let state = TrainState::from_checkpoint(&ck, Some(expected))?;
            Loaded {
                predictor: Box::new(state.model.clone()),
                nms: state.nms,
                state: Some(state),
            }
        }
    })
}

/// Writes the JSON report to `out` and the table next to it; returns the table.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: Split, out: &Path) -> Result<String> {
    let loaded = load_predictor(checkpoint, &cfg.model)?;
    let data = load_data(cfg)?;
    let clips: Vec<&FeatureClip> = data.split(split).collect();
    let nms = loaded.nms.unwrap_or(cfg.nms);
    let head = loaded.state.as_ref().and_then(|s| s.head.as_ref());
    let report = evaluate(loaded.predictor.as_ref(), &clips, &nms, head, &cfg.train.inference)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    let table = report.table();
    fs::write(out.with_extension("txt"), &table)?;
    Ok(table)
}

/// Proposals for one clip file as JSON lines, best first.
pub fn cmd_detect(cfg: &RunConfig, checkpoint: &Path, clip_path: &Path) -> Result<String> {
    let loaded = load_predictor(checkpoint, &cfg.model)?;
    require_file(clip_path, "clip")?;
    let id = clip_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Invalid(format!("bad clip path {}", clip_path.display())))?;
    let manifest_path = cfg.paths.data.join(crate::synthgen::MANIFEST_FILE);
    require_file(&manifest_path, "dataset manifest")?;
    let manifest = Dataset::load(manifest_path)?;
    let record = manifest
        .get(id)
        .ok_or_else(|| Error::Invalid(format!("clip {id} is not in the manifest")))?;
    let (h, clip) = read_clip(clip_path, record)?;
    if (h.c_v, h.f_m, h.tau_a, h.t) != (cfg.model.c_v, cfg.model.f_m, cfg.model.tau_a, cfg.model.t) {
        return Err(Error::Format(format!("clip header {h:?} does not match the model config")));
    }
    let nms = loaded.nms.unwrap_or(cfg.nms);
    let pred = loaded.predictor.predict(&clip)?;
    let kept = soft_nms(&candidates(&pred, &clip, &cfg.train.inference)?, &nms);
    proposals_to_jsonl(&kept, record.fps)
}

pub fn cmd_tune_nms(cfg: &RunConfig, checkpoint: &Path) -> Result<NmsConfig> {
    let loaded = load_predictor(checkpoint, &cfg.model)?;
    let data = load_data(cfg)?;
    let clips: Vec<&FeatureClip> = data.split(Split::Validation).collect();
    let results = run_inference(loaded.predictor.as_ref(), &clips, &cfg.train.inference)?;
    let videos: Vec<ValidationVideo> = results
        .into_iter()
        .map(|r| ValidationVideo {
            video_id: r.video_id,
            candidates: r.candidates,
        })
        .collect();
    tune_nms(&videos, &ground_truth(&clips), &NmsConfig::default_grid())
}

/// Relative path to bytes for every file under `dir`.
pub fn directory_contents(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("under dir").to_path_buf();
                out.insert(rel, fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_schema() {
        let cfg = RunConfig::resolve(None, &["train.epochs=3".into(), "train.adam.lr=0.002".into()], Some(9))
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.adam.lr, 0.002);
        assert_eq!((cfg.generator.seed, cfg.train.seed), (9, 9));
        let err = RunConfig::resolve(None, &["train.epoch=3".into()], None).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        let err = RunConfig::resolve(None, &["model.t=32".into()], None).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        assert!(apply_override(&mut serde_json::json!({}), "novalue").is_err());
    }

    #[test]
    fn string_values_fall_back() {
        let mut doc = serde_json::json!({"paths": {"data": "a"}});
        apply_override(&mut doc, "paths.data=some/dir").unwrap();
        assert_eq!(doc["paths"]["data"], "some/dir");
    }
}
