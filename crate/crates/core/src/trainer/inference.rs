use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{frame_labels, gt_boundary_map, BoundaryMap, Modality, Track};
use crate::error::{Error, Result};
use crate::metrics::{auc, EvalProtocol, EvalReport, GroundTruth};
use crate::model::Model;
use crate::postproc::{
    average_maps, extract_proposals, frame_run_proposals, merge_duplicates, pool_map, soft_nms,
    ClassificationHead, HeadConfig, NmsConfig, Proposal,
};
use crate::synthgen::FeatureClip;

/// What a predictor produces for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Fused position, channel and position-channel maps.
    pub maps: [BoundaryMap; 3],
    pub frames_v: Vec<f64>,
    pub frames_a: Vec<f64>,
}

impl Prediction {
    pub fn averaged(&self) -> Result<BoundaryMap> {
        average_maps(&self.maps[0], &self.maps[1], &self.maps[2])
    }
}

pub trait Predictor: Sync {
    fn predict(&self, clip: &FeatureClip) -> Result<Prediction>;
    fn map_dims(&self) -> (usize, usize);
}

impl Predictor for Model {
    fn predict(&self, clip: &FeatureClip) -> Result<Prediction> {
        let out = self.forward(clip)?;
        Ok(Prediction {
            maps: out.fused,
            frames_v: out.frames_v.into_data(),
            frames_a: out.frames_a.into_data(),
        })
    }

    fn map_dims(&self) -> (usize, usize) {
        (self.config().d, self.config().t)
    }
}

/// Emits each clip's ground-truth boundary map and frame labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OraclePredictor {
    pub d: usize,
    pub t: usize,
}

impl Predictor for OraclePredictor {
    fn predict(&self, clip: &FeatureClip) -> Result<Prediction> {
        let map = gt_boundary_map(&clip.record, Track::Shared, self.d, self.t)?;
        let frames = |m| -> Result<Vec<f64>> {
            Ok(frame_labels(&clip.record, Track::Only(m), self.t)?.to_array().into_data())
        };
        Ok(Prediction {
            maps: [map.clone(), map.clone(), map],
            frames_v: frames(Modality::Visual)?,
            frames_a: frames(Modality::Audio)?,
        })
    }

    fn map_dims(&self) -> (usize, usize) {
        (self.d, self.t)
    }
}

/// How proposals are read off a prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    /// Every valid cell of the averaged boundary map.
    #[default]
    Boundary,
    /// Runs of frames whose larger modality score passes the threshold.
    FrameRuns { threshold: f64, min_len: usize },
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub decode: Decode,
    /// Cells below this score are not proposed.
    pub min_score: f64,
    /// Proposals kept per clip before suppression; 0 keeps all.
    pub top_k: usize,
    pub protocol: EvalProtocol,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            decode: Decode::Boundary,
            min_score: 1e-4,
            top_k: 0,
            protocol: EvalProtocol::default(),
        }
    }
}

impl InferenceConfig {
    pub fn frame_runs() -> Self {
        Self {
            decode: Decode::FrameRuns {
                threshold: 0.5,
                min_len: 2,
            },
            ..Self::default()
        }
    }
}

/// Deduplicated proposals of one clip before suppression.
pub fn candidates(pred: &Prediction, clip: &FeatureClip, cfg: &InferenceConfig) -> Result<Vec<Proposal>> {
    let id = &clip.record.id;
    let n = clip.valid_len();
    match cfg.decode {
        Decode::Boundary => {
            let avg = pred.averaged()?;
            let k = if cfg.top_k == 0 { avg.d() * avg.t() } else { cfg.top_k };
            Ok(merge_duplicates(&extract_proposals(&avg, id, n, k, cfg.min_score)?))
        }
        Decode::FrameRuns { threshold, min_len } => {
            let scores: Vec<f64> = pred
                .frames_v
                .iter()
                .zip(&pred.frames_a)
                .map(|(v, a)| v.max(*a))
                .collect();
            Ok(frame_run_proposals(id, &scores, n, threshold, min_len))
        }
    }
}

/// Per-clip outputs of the inference path.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipResult {
    pub video_id: String,
    pub candidates: Vec<Proposal>,
    pub pooled: Vec<f64>,
}

/// Runs the predictor over every clip, in clip order.
pub fn run_inference<P: Predictor + ?Sized>(
    predictor: &P,
    clips: &[&FeatureClip],
    cfg: &InferenceConfig,
) -> Result<Vec<ClipResult>> {
    clips
        .par_iter()
        .map(|clip| {
            let pred = predictor.predict(clip)?;
            Ok(ClipResult {
                video_id: clip.record.id.clone(),
                candidates: candidates(&pred, clip, cfg)?,
                pooled: pool_map(&pred.averaged()?, clip.valid_len()),
            })
        })
        .collect()
}

pub fn ground_truth(clips: &[&FeatureClip]) -> GroundTruth {
    clips
        .iter()
        .map(|c| (c.record.id.clone(), c.record.frame_segments()))
        .collect()
}

/// Suppresses each clip's candidates and concatenates the survivors.
pub fn suppress(results: &[ClipResult], nms: &NmsConfig) -> Vec<Proposal> {
    results.iter().flat_map(|r| soft_nms(&r.candidates, nms)).collect()
}

/// Full evaluation: inference, Soft-NMS, AP/AR and, with a head, AUC.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    clips: &[&FeatureClip],
    nms: &NmsConfig,
    head: Option<&ClassificationHead>,
    cfg: &InferenceConfig,
) -> Result<EvalReport> {
    let results = run_inference(predictor, clips, cfg)?;
    report_from_results(&results, clips, nms, head, cfg)
}

pub fn report_from_results(
    results: &[ClipResult],
    clips: &[&FeatureClip],
    nms: &NmsConfig,
    head: Option<&ClassificationHead>,
    cfg: &InferenceConfig,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    let proposals = suppress(results, nms);
    let auc_value = match head {
        Some(h) => Some(head_auc(h, results, clips)?),
        None => None,
    };
    EvalReport::compute(&proposals, &ground_truth(clips), &cfg.protocol, auc_value)
}

fn head_auc(head: &ClassificationHead, results: &[ClipResult], clips: &[&FeatureClip]) -> Result<f64> {
    let scores = results
        .iter()
        .map(|r| head.score_features(&r.pooled))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = clips.iter().map(|c| c.record.is_fake()).collect();
    auc(&scores, &labels)
}

/// Fits a fresh head on pooled map statistics, labels = clip is fake.
pub fn fit_head(results: &[ClipResult], clips: &[&FeatureClip], cfg: &HeadConfig) -> Result<ClassificationHead> {
    let feats: Vec<Vec<f64>> = results.iter().map(|r| r.pooled.clone()).collect();
    let labels: Vec<bool> = clips.iter().map(|c| c.record.is_fake()).collect();
    let inputs = feats.first().map_or(0, Vec::len);
    let mut head = ClassificationHead::new(inputs, cfg.hidden, cfg.seed);
    head.fit(&feats, &labels, cfg)?;
    Ok(head)
}

/// The same proposals with their scores randomly permuted across the whole
/// set: extents are kept, ranking information is destroyed.
pub fn shuffled_baseline(proposals: &[Proposal], seed: u64) -> Vec<Proposal> {
    let mut scores: Vec<f64> = proposals.iter().map(|p| p.score).collect();
    scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    proposals
        .iter()
        .zip(scores)
        .map(|(p, score)| Proposal { score, ..p.clone() })
        .collect()
}
