//! Brute-force reference implementations and random instance builders shared
//! by the integration tests. Everything here works on integer frame counts
//! and rational comparisons, so it shares no arithmetic with the library.

#![allow(dead_code)]

pub mod desk;

use std::collections::BTreeMap;

use glitchloc::annotations::{SegmentAnnotation, Split, VideoRecord};
use glitchloc::metrics::GroundTruth;
use glitchloc::postproc::Proposal;
use glitchloc::synthgen::{SentimentLexicon, Transcript};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn proposal(video: &str, start: usize, end: usize, score: f64) -> Proposal {
    Proposal {
        video_id: video.to_string(),
        start,
        end,
        score,
    }
}

/// Intersection and union of two half-open integer spans, counted cell by cell.
pub fn overlap_counts(a: (usize, usize), b: (usize, usize)) -> (u64, u64) {
    let lo = a.0.min(b.0);
    let hi = a.1.max(b.1);
    let (mut inter, mut union) = (0, 0);
    for k in lo..hi {
        let in_a = a.0 <= k && k < a.1;
        let in_b = b.0 <= k && k < b.1;
        inter += u64::from(in_a && in_b);
        union += u64::from(in_a || in_b);
    }
    (inter, union)
}

pub fn oracle_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let (i, u) = overlap_counts(a, b);
    if u == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    i as f64 / u as f64
}

/// `iou >= pct / 100`, decided in integers.
fn passes(a: (usize, usize), b: (usize, usize), pct: u64) -> bool {
    let (i, u) = overlap_counts(a, b);
    i * 100 >= pct * u && u > 0
}

/// `iou(p, x) > iou(p, y)` in integers.
fn closer(p: (usize, usize), x: (usize, usize), y: (usize, usize)) -> bool {
    let (ix, ux) = overlap_counts(p, x);
    let (iy, uy) = overlap_counts(p, y);
    ix * uy > iy * ux
}

/// `a` ranks before `b`: higher score, then video id, start, end.
fn ranks_before(a: &Proposal, b: &Proposal) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    (a.video_id.as_str(), a.start, a.end) < (b.video_id.as_str(), b.start, b.end)
}

/// Ranking by repeated selection of the best remaining proposal.
pub fn selection_rank(props: &[Proposal]) -> Vec<Proposal> {
    let mut pool: Vec<Proposal> = props.to_vec();
    let mut out = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            if ranks_before(&pool[k], &pool[best]) {
                best = k;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

/// Greedy one-to-one matching; returns one flag per ranked prediction.
fn greedy_hits(ranked: &[Proposal], gt: &GroundTruth, pct: u64) -> Vec<bool> {
    let mut used: BTreeMap<&str, Vec<bool>> =
        gt.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
    ranked
        .iter()
        .map(|p| {
            let (Some(segs), Some(flags)) = (gt.get(&p.video_id), used.get_mut(p.video_id.as_str())) else {
                return false;
            };
            let span = (p.start, p.end);
            let mut pick: Option<usize> = None;
            for (k, &g) in segs.iter().enumerate() {
                if flags[k] || !passes(span, g, pct) {
                    continue;
                }
                if pick.map_or(true, |b| closer(span, g, segs[b])) {
                    pick = Some(k);
                }
            }
            if let Some(k) = pick {
                flags[k] = true;
            }
            pick.is_some()
        })
        .collect()
}

fn percent(thr: f64) -> u64 {
    (thr * 100.0).round() as u64
}

/// All-point AP: each true positive adds `1/total` times the best precision
/// reached at that rank or later.
pub fn oracle_ap(preds: &[Proposal], gt: &GroundTruth, thr: f64) -> f64 {
    let total: usize = gt.values().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let ranked = selection_rank(preds);
    let hits = greedy_hits(&ranked, gt, percent(thr));
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    let mut ap = 0.0;
    for (k, &h) in hits.iter().enumerate() {
        if h {
            let best_later = precision[k..].iter().copied().fold(0.0, f64::max);
            ap += best_later / total as f64;
        }
    }
    ap
}

/// Per-video recall of the top-`n` proposals, averaged over IoU 0.50..0.95
/// and then over videos that have ground truth.
pub fn oracle_ar(preds: &[Proposal], gt: &GroundTruth, n: usize) -> f64 {
    let mut per_video = Vec::new();
    for (video, segs) in gt {
        if segs.is_empty() {
            continue;
        }
        let mine: Vec<Proposal> = preds.iter().filter(|p| &p.video_id == video).cloned().collect();
        let top: Vec<Proposal> = selection_rank(&mine).into_iter().take(n).collect();
        let only: GroundTruth = [(video.clone(), segs.clone())].into_iter().collect();
        let mut sum = 0.0;
        for pct in (50..=95).step_by(5) {
            let hits = greedy_hits(&top, &only, pct).iter().filter(|&&h| h).count();
            sum += hits as f64 / segs.len() as f64;
        }
        per_video.push(sum / 10.0);
    }
    if per_video.is_empty() {
        0.0
    } else {
        per_video.iter().sum::<f64>() / per_video.len() as f64
    }
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
pub fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Gaussian Soft-NMS written as a plain selection loop.
pub fn oracle_soft_nms(props: &[Proposal], sigma: f64, floor: f64, max_output: usize) -> Vec<Proposal> {
    let mut pool: Vec<Proposal> = props.to_vec();
    let mut out = Vec::new();
    while !pool.is_empty() && out.len() < max_output {
        let mut best = 0;
        for k in 1..pool.len() {
            let (a, b) = (&pool[k], &pool[best]);
            if a.score > b.score || (a.score == b.score && (a.start, a.end) < (b.start, b.end)) {
                best = k;
            }
        }
        if pool[best].score < floor {
            break;
        }
        let chosen = pool.remove(best);
        for p in &mut pool {
            let iou = oracle_iou((chosen.start, chosen.end), (p.start, p.end));
            p.score *= (-iou * iou / sigma).exp();
        }
        out.push(chosen);
    }
    out
}

/// Best plan of at most `max` substitutions at distinct tokens: largest
/// `|S(D') - S(D)|`, then fewer substitutions, lower indices, smaller
/// antonyms. Returns `(value, [(index, antonym)])`, empty when nothing moves.
pub fn oracle_theta(words: &[String], lex: &SentimentLexicon, max: usize) -> (f64, Vec<(usize, String)>) {
    let score = |ws: &[String]| -> f64 { ws.iter().map(|w| lex.valence.get(w).copied().unwrap_or(0.0)).sum() };
    let base = score(words);
    let options: Vec<(usize, String)> = words
        .iter()
        .enumerate()
        .flat_map(|(i, w)| {
            lex.antonyms
                .get(w)
                .into_iter()
                .flatten()
                .map(move |a| (i, a.clone()))
        })
        .collect();
    let mut plans: Vec<Vec<(usize, String)>> = options.iter().map(|o| vec![o.clone()]).collect();
    if max >= 2 {
        for x in &options {
            for y in &options {
                if x.0 < y.0 {
                    plans.push(vec![x.clone(), y.clone()]);
                }
            }
        }
    }
    assert!(max <= 2, "oracle enumerates pairs only");
    let value = |plan: &[(usize, String)]| {
        let mut ws = words.to_vec();
        for (i, a) in plan {
            ws[*i] = a.clone();
        }
        (score(&ws) - base).abs()
    };
    let key = |plan: &[(usize, String)]| {
        (
            plan.len(),
            plan.iter().map(|p| p.0).collect::<Vec<_>>(),
            plan.iter().map(|p| p.1.clone()).collect::<Vec<_>>(),
        )
    };
    let mut best: Option<(f64, Vec<(usize, String)>)> = None;
    for plan in plans {
        let v = value(&plan);
        let better = match &best {
            None => true,
            Some((bv, bp)) => v > *bv || (v == *bv && key(&plan) < key(bp)),
        };
        if better {
            best = Some((v, plan));
        }
    }
    match best {
        Some((v, plan)) if v != 0.0 => (v, plan),
        _ => (0.0, Vec::new()),
    }
}

pub fn random_gt(rng: &mut ChaCha8Rng, videos: usize, len: usize) -> GroundTruth {
    (0..videos)
        .map(|v| {
            let n = rng.gen_range(0..=3);
            let segs = (0..n)
                .map(|_| {
                    let s = rng.gen_range(0..len - 1);
                    (s, rng.gen_range(s + 1..=len.min(s + 6)))
                })
                .collect();
            (format!("v{v:02}"), segs)
        })
        .collect()
}

/// Up to `per_video` proposals per video; scores on a coarse grid so ties occur.
pub fn random_proposals(rng: &mut ChaCha8Rng, gt: &GroundTruth, per_video: usize, len: usize) -> Vec<Proposal> {
    let mut out = Vec::new();
    for (video, segs) in gt {
        for _ in 0..rng.gen_range(0..=per_video) {
            let (s, e) = if !segs.is_empty() && rng.gen_bool(0.5) {
                let (a, b) = segs[rng.gen_range(0..segs.len())];
                let s = (a as i64 + rng.gen_range(-1..=1)).clamp(0, len as i64 - 1) as usize;
                let e = (b as i64 + rng.gen_range(-1..=1)).clamp(s as i64 + 1, len as i64) as usize;
                (s, e)
            } else {
                let s = rng.gen_range(0..len - 1);
                (s, rng.gen_range(s + 1..=len))
            };
            out.push(proposal(video, s, e, f64::from(rng.gen_range(1..=10)) / 10.0));
        }
    }
    out
}

/// A lexicon over `w0..w{n-1}` with half-integer valences and random antonyms.
pub fn random_lexicon(rng: &mut ChaCha8Rng, n: usize) -> SentimentLexicon {
    let words: Vec<String> = (0..n).map(|k| format!("w{k}")).collect();
    let valence = words
        .iter()
        .map(|w| (w.clone(), f64::from(rng.gen_range(-6..=6)) / 2.0))
        .collect();
    let antonyms = words
        .iter()
        .filter_map(|w| {
            let set: std::collections::BTreeSet<String> = (0..rng.gen_range(0..=3))
                .map(|_| words[rng.gen_range(0..n)].clone())
                .filter(|a| a != w)
                .collect();
            (!set.is_empty()).then(|| (w.clone(), set))
        })
        .collect();
    SentimentLexicon::new(valence, antonyms).expect("every antonym has a valence")
}

pub fn random_words(rng: &mut ChaCha8Rng, lex_size: usize, max_tokens: usize) -> Vec<String> {
    (0..rng.gen_range(1..=max_tokens))
        .map(|_| {
            let k = rng.gen_range(0..=lex_size);
            if k == lex_size {
                "filler".to_string()
            } else {
                format!("w{k}")
            }
        })
        .collect()
}

pub fn transcript(words: &[String]) -> Transcript {
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    Transcript::from_words(&refs)
}

/// A record at 5 fps with frame-aligned segments no longer than `max_len` frames.
pub fn random_record(rng: &mut ChaCha8Rng, id: &str, n_frames: usize, max_len: usize) -> VideoRecord {
    let (modify_visual, modify_audio) = match rng.gen_range(0..4) {
        0 => (false, false),
        1 => (true, false),
        2 => (false, true),
        _ => (true, true),
    };
    let mut fake_segments = Vec::new();
    if modify_visual || modify_audio {
        let len = rng.gen_range(1..=max_len.min(n_frames));
        let s = rng.gen_range(0..=n_frames - len);
        fake_segments.push(SegmentAnnotation {
            start: s as f64 / 5.0,
            end: (s + len) as f64 / 5.0,
        });
    }
    VideoRecord {
        id: id.to_string(),
        fps: 5.0,
        n_frames,
        modify_visual,
        modify_audio,
        fake_segments,
        split: Split::Train,
        transcript_ops: None,
    }
}
