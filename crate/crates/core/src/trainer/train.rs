use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::inference::{fit_head, ground_truth, report_from_results, run_inference, InferenceConfig};
use crate::autodiff::{Array, Graph};
use crate::error::{Error, Result};
use crate::losses::{sample_loss, total_loss, LossParts, LossWeights, SampleTargets};
use crate::model::{Checkpoint, CheckpointKind, CheckpointMeta, Model, ModelConfig};
use crate::postproc::{tune_nms, ClassificationHead, HeadConfig, NmsConfig, ValidationVideo};
use crate::synthgen::{derive_seed, FeatureClip};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_interval: usize,
    pub head: HeadConfig,
    pub inference: InferenceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 11,
            checkpoint_interval: 0,
            head: HeadConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        self.loss.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Step {
        epoch: usize,
        step: u64,
        contrastive: f64,
        frame: f64,
        boundary: f64,
        multimodal: f64,
        total: f64,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
        val_ap50: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Epoch { mean_loss, .. } => Some(*mean_loss),
                LogEntry::Step { .. } => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Model weights, optimiser state and post-training artefacts.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub epoch: usize,
    pub seed: u64,
    pub nms: Option<NmsConfig>,
    pub head: Option<ClassificationHead>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl TrainState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let model = Model::new(config, derive_seed(seed, "init"))?;
        let adam = AdamState::new(model.params().arrays());
        Ok(Self {
            model,
            adam,
            epoch: 0,
            seed,
            nms: None,
            head: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut arrays = self.model.named_params();
        let names = self.model.params().names();
        let shapes = self.model.params().arrays();
        for (prefix, moments) in [(ADAM_M, &self.adam.m), (ADAM_V, &self.adam.v)] {
            for ((n, a), m) in names.iter().zip(shapes).zip(moments) {
                let arr = Array::new(a.shape().to_vec(), m.clone()).expect("moment shape");
                arrays.push((format!("{prefix}{n}"), arr));
            }
        }
        if let Some(h) = &self.head {
            for (n, a) in ClassificationHead::PARAM_NAMES.iter().zip(h.params()) {
                arrays.push((n.to_string(), a.clone()));
            }
        }
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Model,
                model: self.model.config().clone(),
                epoch: self.epoch,
                step: self.adam.step,
                seed: self.seed,
                nms: self.nms,
            },
            arrays,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        let model = Model::from_checkpoint(ck, expected)?;
        let moments = |prefix: &str| -> Result<Vec<Vec<f64>>> {
            let named = ck.with_prefix(prefix);
            if named.len() != model.params().len() {
                return Err(Error::Format(format!("checkpoint lacks optimiser state {prefix}*")));
            }
            Ok(named.into_iter().map(|(_, a)| a.into_data()).collect())
        };
        let adam = AdamState {
            step: ck.meta.step,
            m: moments(ADAM_M)?,
            v: moments(ADAM_V)?,
        };
        let head_arrays: Vec<Array> = ClassificationHead::PARAM_NAMES
            .iter()
            .filter_map(|n| ck.get(n).cloned())
            .collect();
        let head = match head_arrays.len() {
            0 => None,
            4 => Some(ClassificationHead::from_params(head_arrays)?),
            _ => return Err(Error::Format("partial classification head in checkpoint".into())),
        };
        Ok(Self {
            model,
            adam,
            epoch: ck.meta.epoch,
            seed: ck.meta.seed,
            nms: ck.meta.nms,
            head,
        })
    }
}

/// Where and how often the trainer writes artefacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "model.btfd";
pub const LOG_FILE: &str = "train_log.jsonl";

fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.btfd"))
}

fn grads_of(g: &Graph, vars: &[crate::autodiff::Var], params: &[Array]) -> Vec<Vec<f64>> {
    vars.iter()
        .zip(params)
        .map(|(&v, a)| g.grad(v).map_or_else(|| vec![0.0; a.len()], <[f64]>::to_vec))
        .collect()
}

/// Loss parts and parameter gradients of one sample.
fn sample_step(
    model: &Model,
    clip: &FeatureClip,
    targets: &SampleTargets,
    w: &LossWeights,
    frames_total: usize,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let out = model.forward_graph(&mut g, &p, &clip.visual, &clip.audio, clip.valid_len())?;
    let loss = sample_loss(&mut g, &out, targets, w, frames_total)?;
    g.backward(loss.total)?;
    Ok((loss.parts(&g), grads_of(&g, &p, model.params().arrays())))
}

/// Loss parts and summed gradients of a batch, reduced in sample order.
pub fn batch_gradients(
    model: &Model,
    batch: &[(&FeatureClip, &SampleTargets)],
    w: &LossWeights,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let frames_total: usize = batch.iter().map(|(c, _)| c.valid_len()).sum();
    let per_sample = batch
        .par_iter()
        .map(|(c, t)| sample_step(model, c, t, w, frames_total))
        .collect::<Result<Vec<_>>>()?;
    let mut parts = LossParts::default();
    let mut grads: Vec<Vec<f64>> = model.params().arrays().iter().map(|a| vec![0.0; a.len()]).collect();
    for (p, gs) in &per_sample {
        parts.add(p);
        for (acc, g) in grads.iter_mut().zip(gs) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    Ok((parts, grads))
}

fn targets_for(clips: &[&FeatureClip], cfg: &ModelConfig) -> Result<Vec<SampleTargets>> {
    clips
        .iter()
        .map(|c| SampleTargets::from_record(&c.record, cfg.d, cfg.t))
        .collect()
}

fn check_clips(clips: &[&FeatureClip], cfg: &ModelConfig, what: &str) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Invalid(format!("{what} split is empty")));
    }
    for c in clips {
        if c.visual.shape() != [cfg.c_v, cfg.t] || c.audio.shape() != [cfg.audio_rows(), cfg.t] {
            return Err(Error::Config(format!(
                "clip {} has shapes {:?}/{:?}, model expects [{}, {}]/[{}, {}]",
                c.record.id,
                c.visual.shape(),
                c.audio.shape(),
                cfg.c_v,
                cfg.t,
                cfg.audio_rows(),
                cfg.t
            )));
        }
    }
    Ok(())
}

/// Runs the remaining epochs of `state`, then tunes Soft-NMS on the
/// validation split and fits the clip-level head on the training split.
pub fn train(
    state: &mut TrainState,
    train_clips: &[&FeatureClip],
    val_clips: &[&FeatureClip],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mcfg = state.model.config().clone();
    check_clips(train_clips, &mcfg, "training")?;
    check_clips(val_clips, &mcfg, "validation")?;
    let targets = targets_for(train_clips, &mcfg)?;
    let mut log = TrainLog::default();
    let mut log_file = match &outputs.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(state.epoch > 0)
                .write(true)
                .truncate(state.epoch == 0)
                .open(dir.join(LOG_FILE))?;
            Some(std::io::BufWriter::new(f))
        }
        None => None,
    };
    let mut emit = |log: &mut TrainLog, e: LogEntry| -> Result<()> {
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&e)?)?;
        }
        log.entries.push(e);
        Ok(())
    };

    let default_nms = NmsConfig::default();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            state.seed,
            &format!("epoch/{epoch}"),
        )));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FeatureClip, &SampleTargets)> =
                chunk.iter().map(|&i| (train_clips[i], &targets[i])).collect();
            let (parts, grads) = batch_gradients(&state.model, &batch, &cfg.loss)?;
            let step = state.adam.step + 1;
            let total = total_loss(&parts, &cfg.loss)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch} step {step}: {e}")))?;
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("epoch {epoch} step {step}: gradient")));
            }
            adam_step(state.model.params_mut().arrays_mut(), &grads, &mut state.adam, &cfg.adam)?;
            emit(
                &mut log,
                LogEntry::Step {
                    epoch,
                    step,
                    contrastive: parts.contrastive,
                    frame: parts.frame,
                    boundary: parts.boundary,
                    multimodal: parts.multimodal,
                    total,
                },
            )?;
            epoch_loss += total;
            batches += 1;
        }
        let results = run_inference(&state.model, val_clips, &cfg.inference)?;
        let report = report_from_results(&results, val_clips, &default_nms, None, &cfg.inference)?;
        state.epoch += 1;
        emit(
            &mut log,
            LogEntry::Epoch {
                epoch,
                mean_loss: epoch_loss / batches as f64,
                val_ap50: report.ap_at(0.5).unwrap_or(0.0),
            },
        )?;
        if let (Some(dir), true) = (&outputs.dir, cfg.checkpoint_interval > 0) {
            if state.epoch % cfg.checkpoint_interval == 0 {
                state.checkpoint().save(epoch_checkpoint(dir, state.epoch))?;
            }
        }
    }
    finish(state, train_clips, val_clips, cfg)?;
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    if let Some(dir) = &outputs.dir {
        state.checkpoint().save(dir.join(CHECKPOINT_FILE))?;
    }
    Ok(log)
}

/// Tunes Soft-NMS on validation and fits the head on training clips.
fn finish(
    state: &mut TrainState,
    train_clips: &[&FeatureClip],
    val_clips: &[&FeatureClip],
    cfg: &TrainConfig,
) -> Result<()> {
    let val = run_inference(&state.model, val_clips, &cfg.inference)?;
    let videos: Vec<ValidationVideo> = val
        .iter()
        .map(|r| ValidationVideo {
            video_id: r.video_id.clone(),
            candidates: r.candidates.clone(),
        })
        .collect();
    state.nms = Some(tune_nms(&videos, &ground_truth(val_clips), &NmsConfig::default_grid())?);
    let train = run_inference(&state.model, train_clips, &cfg.inference)?;
    state.head = Some(fit_head(&train, train_clips, &cfg.head)?);
    Ok(())
}
