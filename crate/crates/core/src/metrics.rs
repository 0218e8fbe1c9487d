//! Temporal localization metrics: IoU, AP at fixed IoU thresholds, AR@N over
//! the 0.5:0.05:0.95 sweep, and ROC AUC for clip-level scores.
//!
//! Matching is greedy in score order: each prediction takes the unmatched
//! ground-truth segment of its video with the highest IoU (lowest index on
//! ties), provided that IoU reaches the threshold. AP integrates the
//! monotone precision envelope over every recall step.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::Proposal;

/// Ground truth frame spans keyed by video id.
pub type GroundTruth = BTreeMap<String, Vec<(usize, usize)>>;

/// Intersection over union of two intervals on the real line.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

fn span_iou(p: &Proposal, g: (usize, usize)) -> f64 {
    temporal_iou((p.start as f64, p.end as f64), (g.0 as f64, g.1 as f64))
}

/// The IoU thresholds 0.50, 0.55, ..., 0.95 used by AR@N.
pub fn recall_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Orders proposals by descending score, then video id, start and end.
pub fn ranking_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then_with(|| a.start.cmp(&b.start))
        .then_with(|| a.end.cmp(&b.end))
}

fn best_unmatched(p: &Proposal, gts: &[(usize, usize)], used: &[bool], thr: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &g) in gts.iter().enumerate() {
        if used[k] {
            continue;
        }
        let iou = span_iou(p, g);
        if iou >= thr && best.map_or(true, |(_, b)| iou > b) {
            best = Some((k, iou));
        }
    }
    best.map(|(k, _)| k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApOutcome {
    pub value: f64,
    /// Set when the ground truth holds no segment at all; `value` is then 0.
    pub empty_gt: bool,
}

pub fn average_precision(predictions: &[Proposal], gt: &GroundTruth, iou_threshold: f64) -> ApOutcome {
    let total: usize = gt.values().map(Vec::len).sum();
    if total == 0 {
        return ApOutcome {
            value: 0.0,
            empty_gt: true,
        };
    }
    let mut order: Vec<&Proposal> = predictions.iter().collect();
    order.sort_by(|a, b| ranking_order(a, b));
    let mut used: BTreeMap<&str, Vec<bool>> = gt
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();

    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    for (rank, p) in order.iter().enumerate() {
        if let (Some(gts), Some(u)) = (gt.get(&p.video_id), used.get_mut(p.video_id.as_str())) {
            if let Some(k) = best_unmatched(p, gts, u, iou_threshold) {
                u[k] = true;
                tp += 1;
            }
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / total as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ApOutcome {
        value: ap,
        empty_gt: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArOutcome {
    pub value: f64,
    /// Videos that carry proposals but no ground-truth segment.
    pub excluded: Vec<String>,
}

/// Recall of one video's top-`n` proposals, averaged over the IoU sweep.
fn video_average_recall(mut props: Vec<&Proposal>, gts: &[(usize, usize)], n: usize) -> f64 {
    props.sort_by(|a, b| ranking_order(a, b));
    props.truncate(n);
    let thresholds = recall_thresholds();
    let mut sum = 0.0;
    for &thr in &thresholds {
        let mut used = vec![false; gts.len()];
        let mut hits = 0usize;
        for p in &props {
            if let Some(k) = best_unmatched(p, gts, &used, thr) {
                used[k] = true;
                hits += 1;
            }
        }
        sum += hits as f64 / gts.len() as f64;
    }
    sum / thresholds.len() as f64
}

pub fn average_recall_at_n(proposals: &[Proposal], gt: &GroundTruth, n: usize) -> Result<ArOutcome> {
    if n == 0 {
        return Err(Error::Invalid("AR@N needs N >= 1".into()));
    }
    let mut by_video: BTreeMap<&str, Vec<&Proposal>> = BTreeMap::new();
    for p in proposals {
        by_video.entry(p.video_id.as_str()).or_default().push(p);
    }
    let mut excluded: Vec<String> = by_video
        .keys()
        .filter(|v| gt.get(**v).map_or(true, Vec::is_empty))
        .map(|v| v.to_string())
        .collect();
    excluded.sort();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (video, gts) in gt {
        if gts.is_empty() {
            continue;
        }
        let props = by_video.get(video.as_str()).cloned().unwrap_or_default();
        sum += video_average_recall(props, gts, n);
        count += 1;
    }
    let value = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(ArOutcome { value, excluded })
}

/// ROC AUC in the Mann-Whitney form: P(pos > neg) + P(pos = neg) / 2.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("auc needs both classes present".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks across ties
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Which AP thresholds and AR proposal budgets to report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub ap_thresholds: Vec<f64>,
    pub ar_budgets: Vec<usize>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            ap_thresholds: vec![0.5, 0.75, 0.95],
            ar_budgets: vec![100, 50, 20, 10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoDiagnostics {
    pub video_id: String,
    pub gt_segments: usize,
    pub proposals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub ap: BTreeMap<String, f64>,
    pub ar: BTreeMap<String, f64>,
    pub auc: Option<f64>,
    pub empty_gt: bool,
    pub videos: Vec<VideoDiagnostics>,
    /// Column order for the table, e.g. `["AP@0.5", ..., "AR@10"]`.
    pub columns: Vec<String>,
}

pub fn ap_key(thr: f64) -> String {
    format!("{thr}")
}

impl EvalReport {
    pub fn compute(
        proposals: &[Proposal],
        gt: &GroundTruth,
        protocol: &EvalProtocol,
        auc: Option<f64>,
    ) -> Result<Self> {
        let mut ap = BTreeMap::new();
        let mut ar = BTreeMap::new();
        let mut columns = Vec::new();
        let mut empty_gt = false;
        for &thr in &protocol.ap_thresholds {
            let out = average_precision(proposals, gt, thr);
            empty_gt |= out.empty_gt;
            ap.insert(ap_key(thr), out.value);
            columns.push(format!("AP@{}", ap_key(thr)));
        }
        for &n in &protocol.ar_budgets {
            ar.insert(n.to_string(), average_recall_at_n(proposals, gt, n)?.value);
            columns.push(format!("AR@{n}"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in proposals {
            *counts.entry(p.video_id.as_str()).or_default() += 1;
        }
        let videos = gt
            .iter()
            .map(|(id, segs)| VideoDiagnostics {
                video_id: id.clone(),
                gt_segments: segs.len(),
                proposals: counts.get(id.as_str()).copied().unwrap_or(0),
            })
            .collect();
        Ok(Self {
            ap,
            ar,
            auc,
            empty_gt,
            videos,
            columns,
        })
    }

    pub fn ap_at(&self, thr: f64) -> Option<f64> {
        self.ap.get(&ap_key(thr)).copied()
    }

    pub fn ar_at(&self, n: usize) -> Option<f64> {
        self.ar.get(&n.to_string()).copied()
    }

    fn column_value(&self, col: &str) -> Option<f64> {
        if let Some(k) = col.strip_prefix("AP@") {
            self.ap.get(k).copied()
        } else if let Some(k) = col.strip_prefix("AR@") {
            self.ar.get(k).copied()
        } else {
            None
        }
    }

    /// Plain-text table, values in percent with two decimals.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for col in &self.columns {
            let _ = write!(head, "{col:>9}");
            let v = self.column_value(col).unwrap_or(f64::NAN) * 100.0;
            let _ = write!(row, "{v:>9.2}");
        }
        let mut out = format!("{head}\n{row}\n");
        if let Some(a) = self.auc {
            let _ = writeln!(out, "AUC {a:.4}");
        }
        out
    }
}
