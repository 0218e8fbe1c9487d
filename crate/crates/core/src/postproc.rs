//! Inference post-processing: boundary-map averaging, dense proposal
//! extraction, Gaussian Soft-NMS, S-NMS tuning and the clip-level score head.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::BoundaryMap;
use crate::autodiff::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::{average_precision, temporal_iou, GroundTruth};
use crate::trainer::{adam_step, AdamConfig, AdamState};

/// A scored half-open frame span `[start, end)` of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl Proposal {
    fn iou(&self, other: &Proposal) -> f64 {
        temporal_iou(
            (self.start as f64, self.end as f64),
            (other.start as f64, other.end as f64),
        )
    }
}

/// Descending score; ties go to the earlier start, then the shorter span.
fn proposal_order(a: &Proposal, b: &Proposal) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.start.cmp(&b.start))
        .then_with(|| a.end.cmp(&b.end))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    /// Gaussian decay width: scores are multiplied by `exp(-iou^2 / sigma)`.
    pub sigma: f64,
    /// Selection stops once the best remaining score falls below this.
    pub score_floor: f64,
    pub max_output: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            score_floor: 1e-3,
            max_output: 100,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(0.0..1.0).contains(&self.score_floor) || self.max_output == 0 {
            return Err(Error::Config(format!("invalid NMS config {self:?}")));
        }
        Ok(())
    }

    /// σ ∈ {0.05, 0.1, 0.25, 0.5, 1.0} x floor ∈ {1e-4, 1e-3, 1e-2}.
    pub fn default_grid() -> Vec<NmsConfig> {
        let mut grid = Vec::new();
        for sigma in [0.05, 0.1, 0.25, 0.5, 1.0] {
            for score_floor in [1e-4, 1e-3, 1e-2] {
                grid.push(NmsConfig {
                    sigma,
                    score_floor,
                    max_output: 100,
                });
            }
        }
        grid
    }
}

/// Element-wise mean of the position, channel and position-channel maps.
pub fn average_maps(p: &BoundaryMap, c: &BoundaryMap, pc: &BoundaryMap) -> Result<BoundaryMap> {
    if p.array().shape() != c.array().shape() || p.array().shape() != pc.array().shape() {
        return Err(Error::shape(
            "average_maps",
            &[p.array().shape(), c.array().shape(), pc.array().shape()],
        ));
    }
    let data = p
        .array()
        .data()
        .iter()
        .zip(c.array().data())
        .zip(pc.array().data())
        .map(|((a, b), c)| a + ((b - a) + (c - a)) / 3.0)
        .collect();
    BoundaryMap::new(Array::new(p.array().shape().to_vec(), data)?)
}

/// Every valid cell scoring at least `min_score`, best first, at most `top_k`.
pub fn extract_proposals(
    map: &BoundaryMap,
    video_id: &str,
    valid_len: usize,
    top_k: usize,
    min_score: f64,
) -> Result<Vec<Proposal>> {
    if top_k == 0 {
        return Err(Error::Invalid("extract_proposals needs top_k >= 1".into()));
    }
    let mut out = Vec::new();
    for i in 0..map.d() {
        for j in 0..map.t() {
            let score = map.get(i, j);
            if BoundaryMap::cell_valid(i, j, valid_len) && score >= min_score {
                out.push(Proposal {
                    video_id: video_id.to_string(),
                    start: j,
                    end: j + i + 1,
                    score,
                });
            }
        }
    }
    out.sort_by(proposal_order);
    out.truncate(top_k);
    Ok(out)
}

/// Collapses proposals with identical extent, keeping the highest score.
pub fn merge_duplicates(proposals: &[Proposal]) -> Vec<Proposal> {
    let mut best: BTreeMap<(&str, usize, usize), f64> = BTreeMap::new();
    for p in proposals {
        let e = best
            .entry((p.video_id.as_str(), p.start, p.end))
            .or_insert(f64::NEG_INFINITY);
        *e = e.max(p.score);
    }
    let mut out: Vec<Proposal> = best
        .into_iter()
        .map(|((v, start, end), score)| Proposal {
            video_id: v.to_string(),
            start,
            end,
            score,
        })
        .collect();
    out.sort_by(proposal_order);
    out
}

/// Gaussian Soft-NMS over the proposals of one video. Output is in selection
/// order and carries the decayed scores.
pub fn soft_nms(proposals: &[Proposal], cfg: &NmsConfig) -> Vec<Proposal> {
    let mut remaining: Vec<Proposal> = proposals.to_vec();
    remaining.sort_by(proposal_order);
    let mut out = Vec::new();
    while !remaining.is_empty() && out.len() < cfg.max_output {
        let best = (0..remaining.len())
            .min_by(|&a, &b| proposal_order(&remaining[a], &remaining[b]))
            .expect("non-empty");
        if remaining[best].score < cfg.score_floor {
            break;
        }
        let chosen = remaining.swap_remove(best);
        for p in &mut remaining {
            let iou = chosen.iou(p);
            p.score *= (-(iou * iou) / cfg.sigma).exp();
        }
        out.push(chosen);
    }
    out
}

/// Candidates of one validation video before suppression.
#[derive(Clone, Debug)]
pub struct ValidationVideo {
    pub video_id: String,
    pub candidates: Vec<Proposal>,
}

/// Picks the grid entry with the highest AP@0.5; earlier entries win ties.
pub fn tune_nms(videos: &[ValidationVideo], gt: &GroundTruth, grid: &[NmsConfig]) -> Result<NmsConfig> {
    if grid.is_empty() {
        return Err(Error::Invalid("tune_nms needs a non-empty grid".into()));
    }
    if videos.is_empty() {
        return Err(Error::Invalid("tune_nms needs a non-empty validation set".into()));
    }
    let mut best: Option<(NmsConfig, f64)> = None;
    for cfg in grid {
        let suppressed: Vec<Proposal> = videos
            .iter()
            .flat_map(|v| soft_nms(&v.candidates, cfg))
            .collect();
        let ap = average_precision(&suppressed, gt, 0.5).value;
        if best.map_or(true, |(_, b)| ap > b) {
            best = Some((*cfg, ap));
        }
    }
    Ok(best.expect("grid non-empty").0)
}

/// Groups consecutive frames scoring at least `threshold` into proposals
/// scored by their mean; runs shorter than `min_len` frames are dropped.
pub fn frame_run_proposals(
    video_id: &str,
    scores: &[f64],
    valid_len: usize,
    threshold: f64,
    min_len: usize,
) -> Vec<Proposal> {
    let mut out = Vec::new();
    let n = valid_len.min(scores.len());
    let mut k = 0;
    while k < n {
        if scores[k] < threshold {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && scores[k] >= threshold {
            k += 1;
        }
        if k - start >= min_len {
            let mean = scores[start..k].iter().sum::<f64>() / (k - start) as f64;
            out.push(Proposal {
                video_id: video_id.to_string(),
                start,
                end: k,
                score: mean,
            });
        }
    }
    out.sort_by(proposal_order);
    out
}

/// One line of the proposal JSON-lines output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalLine {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

pub fn proposals_to_jsonl(proposals: &[Proposal], fps: f64) -> Result<String> {
    let mut out = String::new();
    for p in proposals {
        let line = ProposalLine {
            video_id: p.video_id.clone(),
            start_s: p.start as f64 / fps,
            end_s: p.end as f64 / fps,
            score: p.score,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Top values averaged per duration row in the pooled features.
const POOL_TOP_K: usize = 3;

/// Per duration row: max, mean and top-3 mean over the valid cells.
pub fn pool_map(map: &BoundaryMap, valid_len: usize) -> Vec<f64> {
    let mut feats = Vec::with_capacity(3 * map.d());
    for i in 0..map.d() {
        let mut row: Vec<f64> = (0..map.t())
            .filter(|&j| BoundaryMap::cell_valid(i, j, valid_len))
            .map(|j| map.get(i, j))
            .collect();
        if row.is_empty() {
            feats.extend([0.0, 0.0, 0.0]);
            continue;
        }
        row.sort_by(|a, b| b.total_cmp(a));
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let k = POOL_TOP_K.min(row.len());
        let top = row[..k].iter().sum::<f64>() / k as f64;
        feats.extend([row[0], mean, top]);
    }
    feats
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 300,
            lr: 1e-2,
            seed: 17,
        }
    }
}

/// Two-layer perceptron mapping pooled boundary-map statistics to a
/// real/fake probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationHead {
    /// `[w1 (hidden x in), b1 (hidden), w2 (1 x hidden), b2 (1)]`
    params: Vec<Array>,
    trained: bool,
}

impl ClassificationHead {
    pub const PARAM_NAMES: [&'static str; 4] = ["head.w1", "head.b1", "head.w2", "head.b2"];

    /// Randomly initialised head; unusable until [`fit`](Self::fit).
    pub fn new(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
                .expect("shape")
        };
        let params = vec![
            uniform(&[hidden, inputs], inputs),
            Array::zeros(&[hidden]),
            uniform(&[1, hidden], hidden),
            Array::zeros(&[1]),
        ];
        Self {
            params,
            trained: false,
        }
    }

    /// Head with explicit weights, e.g. restored from a checkpoint.
    pub fn from_params(params: Vec<Array>) -> Result<Self> {
        let ok = params.len() == 4
            && params[0].shape().len() == 2
            && params[1].shape() == [params[0].rows()]
            && params[2].shape() == [1, params[0].rows()]
            && params[3].shape() == [1];
        if !ok {
            return Err(Error::Format("classification head parameter shapes".into()));
        }
        Ok(Self {
            params,
            trained: true,
        })
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            params: vec![
                Array::zeros(&[hidden, inputs]),
                Array::zeros(&[hidden]),
                Array::zeros(&[1, hidden]),
                Array::zeros(&[1]),
            ],
            trained: true,
        }
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn inputs(&self) -> usize {
        self.params[0].cols()
    }

    fn logits(&self, g: &mut Graph, p: &[Var], x: Var, n: usize) -> Result<Var> {
        let h = g.matmul(p[0], x)?;
        let b1 = g.broadcast_cols(p[1], n)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(p[2], h)?;
        let b2 = g.broadcast_cols(p[3], n)?;
        g.add(o, b2)
    }

    fn features_matrix(&self, feats: &[Vec<f64>]) -> Result<Array> {
        let d = self.inputs();
        if feats.iter().any(|f| f.len() != d) {
            return Err(Error::shape("classification head", &[&[d]]));
        }
        // one column per sample
        Ok(Array::from_fn2(d, feats.len(), |r, c| feats[c][r]))
    }

    /// Full-batch Adam on binary cross-entropy; labels are `true` for fake.
    pub fn fit(&mut self, feats: &[Vec<f64>], labels: &[bool], cfg: &HeadConfig) -> Result<()> {
        if feats.is_empty() || feats.len() != labels.len() {
            return Err(Error::Invalid("classification head needs matching, non-empty data".into()));
        }
        let x = self.features_matrix(feats)?;
        let y = Array::new(
            vec![1, labels.len()],
            labels.iter().map(|&l| f64::from(u8::from(l))).collect(),
        )?;
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&self.params);
        for _ in 0..cfg.epochs {
            let mut g = Graph::new();
            let p: Vec<Var> = self.params.iter().map(|a| g.var(a.clone())).collect();
            let xv = g.constant(x.clone());
            let z = self.logits(&mut g, &p, xv, labels.len())?;
            let prob = g.sigmoid(z);
            let l = g.bce(prob, &y)?;
            let loss = g.mean(l);
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = p
                .iter()
                .zip(&self.params)
                .map(|(&v, a)| g.grad(v).map_or_else(|| vec![0.0; a.len()], <[f64]>::to_vec))
                .collect();
            adam_step(&mut self.params, &grads, &mut state, &adam)?;
        }
        self.trained = true;
        Ok(())
    }

    pub fn score_features(&self, feats: &[f64]) -> Result<f64> {
        if !self.trained {
            return Err(Error::Invalid("classification head has not been trained".into()));
        }
        let x = self.features_matrix(&[feats.to_vec()])?;
        let mut g = Graph::new();
        let p: Vec<Var> = self.params.iter().map(|a| g.constant(a.clone())).collect();
        let xv = g.constant(x);
        let z = self.logits(&mut g, &p, xv, 1)?;
        let s = g.sigmoid(z);
        Ok(g.scalar(s))
    }
}

/// Clip-level fake probability from a boundary map.
pub fn video_score(map: &BoundaryMap, valid_len: usize, head: &ClassificationHead) -> Result<f64> {
    head.score_features(&pool_map(map, valid_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;

    fn p(start: usize, end: usize, score: f64) -> Proposal {
        Proposal {
            video_id: "v".into(),
            start,
            end,
            score,
        }
    }

    fn const_map(d: usize, t: usize, v: f64) -> BoundaryMap {
        BoundaryMap::new(Array::full(&[d, t], v)).unwrap()
    }

    #[test]
    fn averaging_maps() {
        let m = const_map(2, 4, 0.42);
        assert_eq!(average_maps(&m, &m, &m).unwrap(), m);
        let avg = average_maps(&const_map(2, 4, 0.0), &const_map(2, 4, 0.3), &const_map(2, 4, 0.6)).unwrap();
        assert!(avg.array().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(average_maps(&m, &const_map(3, 4, 0.0), &m).is_err());
    }

    #[test]
    fn zero_map_extracts_nothing() {
        let m = const_map(3, 10, 0.0);
        assert!(extract_proposals(&m, "v", 10, 50, 1e-3).unwrap().is_empty());
        assert!(extract_proposals(&m, "v", 10, 0, 1e-3).is_err());
    }

    #[test]
    fn extraction_respects_clip_length_and_ties() {
        let m = const_map(3, 6, 0.5);
        let props = extract_proposals(&m, "v", 4, 100, 0.1).unwrap();
        assert!(props.iter().all(|p| p.end <= 4));
        // 4 + 3 + 2 valid cells
        assert_eq!(props.len(), 9);
        assert_eq!((props[0].start, props[0].end), (0, 1));
        assert_eq!((props[1].start, props[1].end), (0, 2));
    }

    #[test]
    fn single_and_disjoint_proposals_are_untouched() {
        let cfg = NmsConfig::default();
        assert_eq!(soft_nms(&[p(0, 4, 0.7)], &cfg), vec![p(0, 4, 0.7)]);
        let out = soft_nms(&[p(0, 4, 0.7), p(10, 12, 0.6)], &cfg);
        assert_eq!(out, vec![p(0, 4, 0.7), p(10, 12, 0.6)]);
    }

    #[test]
    fn identical_extent_decays_by_gaussian() {
        let cfg = NmsConfig {
            sigma: 0.5,
            score_floor: 1e-4,
            max_output: 10,
        };
        let out = soft_nms(&[p(3, 7, 0.8), p(3, 7, 0.9)], &cfg);
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((out[1].score - 0.10827).abs() < 1e-5);
        assert_eq!(merge_duplicates(&[p(3, 7, 0.8), p(3, 7, 0.9)]), vec![p(3, 7, 0.9)]);
    }

    #[test]
    fn floor_and_budget_stop_selection() {
        let cfg = NmsConfig {
            sigma: 0.5,
            score_floor: 0.5,
            max_output: 10,
        };
        assert_eq!(soft_nms(&[p(0, 2, 0.9), p(5, 6, 0.4)], &cfg).len(), 1);
        let cfg = NmsConfig {
            max_output: 1,
            score_floor: 0.0,
            ..cfg
        };
        assert_eq!(soft_nms(&[p(0, 2, 0.9), p(5, 6, 0.8)], &cfg).len(), 1);
    }

    #[test]
    fn tune_nms_degenerate_and_errors() {
        let videos = vec![ValidationVideo {
            video_id: "v".into(),
            candidates: vec![p(0, 4, 0.9)],
        }];
        let gt: GroundTruth = [("v".to_string(), vec![(0, 4)])].into();
        let only = NmsConfig {
            sigma: 0.1,
            score_floor: 1e-2,
            max_output: 5,
        };
        assert_eq!(tune_nms(&videos, &gt, &[only]).unwrap(), only);
        assert!(tune_nms(&videos, &gt, &[]).is_err());
        assert!(tune_nms(&[], &gt, &[only]).is_err());
    }

    #[test]
    fn tune_nms_prefers_the_exact_config() {
        // Loose decay leaves the shifted duplicate above the second hit.
        let videos = vec![ValidationVideo {
            video_id: "v".into(),
            candidates: vec![p(0, 4, 0.9), p(0, 3, 0.85), p(20, 22, 0.4)],
        }];
        let gt: GroundTruth = [("v".to_string(), vec![(0, 4), (20, 22)])].into();
        let loose = NmsConfig {
            sigma: 1.0,
            score_floor: 1e-4,
            max_output: 100,
        };
        let tight = NmsConfig {
            sigma: 0.05,
            score_floor: 1e-2,
            max_output: 100,
        };
        assert_eq!(tune_nms(&videos, &gt, &[loose, tight]).unwrap(), tight);
    }

    #[test]
    fn frame_runs() {
        let s = [0.1, 0.9, 0.8, 0.2, 0.7, 0.1, 0.6, 0.6, 0.6, 0.9];
        let props = frame_run_proposals("v", &s, 9, 0.5, 2);
        let spans: Vec<(usize, usize)> = props.iter().map(|p| (p.start, p.end)).collect();
        assert_eq!(spans, vec![(1, 3), (6, 9)]);
    }

    #[test]
    fn jsonl_converts_frames_to_seconds() {
        let text = proposals_to_jsonl(&[p(5, 10, 0.5)], 5.0).unwrap();
        let line: ProposalLine = serde_json::from_str(text.trim()).unwrap();
        assert_eq!((line.start_s, line.end_s), (1.0, 2.0));
    }

    #[test]
    fn zero_head_scores_half_and_untrained_is_rejected() {
        let m = const_map(4, 10, 0.0);
        let head = ClassificationHead::zeros(12, 8);
        assert_eq!(video_score(&m, 10, &head).unwrap(), 0.5);
        let fresh = ClassificationHead::new(12, 8, 1);
        assert!(video_score(&m, 10, &fresh).is_err());
    }

    #[test]
    fn head_separates_synthetic_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sample = |fake: bool| -> Vec<f64> {
            (0..12)
                .map(|k| {
                    let base = rng.gen_range(0.0..0.4);
                    if fake && k % 3 == 0 { base + 0.5 } else { base }
                })
                .collect()
        };
        let train: Vec<(Vec<f64>, bool)> = (0..80).map(|i| (sample(i % 2 == 0), i % 2 == 0)).collect();
        let test: Vec<(Vec<f64>, bool)> = (0..40).map(|i| (sample(i % 3 == 0), i % 3 == 0)).collect();
        let mut head = ClassificationHead::new(12, 8, 3);
        let (x, y): (Vec<_>, Vec<_>) = train.into_iter().unzip();
        head.fit(&x, &y, &HeadConfig::default()).unwrap();
        let scores: Vec<f64> = test.iter().map(|(f, _)| head.score_features(f).unwrap()).collect();
        let labels: Vec<bool> = test.iter().map(|t| t.1).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!(a >= 0.95, "{a}");
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }
}
