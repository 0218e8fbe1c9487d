//! Clip annotations and the training targets derived from them.
//!
//! A [`VideoRecord`] carries one clip's modality flags and fake segments (in
//! seconds). From it we derive per-frame labels, dense boundary maps and the
//! contrastive label. The annotation file is a JSON array of records.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::metrics::temporal_iou;

/// Second-to-frame products within this distance of an integer snap to it.
const FRAME_SNAP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Audio,
}

/// Which label stream a target is built for: the shared fake/real labels
/// (`Y`), or one modality's labels (`Y_v`, `Y_a`), which fall back to the
/// all-real labels when that modality is untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Track {
    Shared,
    Only(Modality),
}

/// A fake segment in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct SegmentAnnotation {
    pub start: f64,
    pub end: f64,
}

impl From<[f64; 2]> for SegmentAnnotation {
    fn from([start, end]: [f64; 2]) -> Self {
        Self { start, end }
    }
}

impl From<SegmentAnnotation> for [f64; 2] {
    fn from(s: SegmentAnnotation) -> Self {
        [s.start, s.end]
    }
}

impl SegmentAnnotation {
    /// Half-open frame span `[floor(start*fps), ceil(end*fps))`.
    pub fn frame_span(&self, fps: f64) -> (usize, usize) {
        let s = self.start * fps;
        let e = self.end * fps;
        let s = if (s - s.round()).abs() < FRAME_SNAP { s.round() } else { s.floor() };
        let e = if (e - e.round()).abs() < FRAME_SNAP { e.round() } else { e.ceil() };
        (s.max(0.0) as usize, e.max(0.0) as usize)
    }
}

/// One transcript substitution: token index, original word, replacement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, String, String)", into = "(usize, String, String)")]
pub struct TranscriptOp {
    pub index: usize,
    pub original: String,
    pub replacement: String,
}

impl From<(usize, String, String)> for TranscriptOp {
    fn from((index, original, replacement): (usize, String, String)) -> Self {
        Self {
            index,
            original,
            replacement,
        }
    }
}

impl From<TranscriptOp> for (usize, String, String) {
    fn from(op: TranscriptOp) -> Self {
        (op.index, op.original, op.replacement)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub fps: f64,
    pub n_frames: usize,
    pub modify_visual: bool,
    pub modify_audio: bool,
    pub fake_segments: Vec<SegmentAnnotation>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_ops: Option<Vec<TranscriptOp>>,
}

impl VideoRecord {
    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::Annotation {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(self.invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.n_frames == 0 {
            return Err(self.invalid("n_frames must be positive"));
        }
        let duration = self.duration();
        for s in &self.fake_segments {
            if !(s.start.is_finite() && s.end.is_finite()) || s.start < 0.0 || s.end <= s.start {
                return Err(self.invalid(format!("bad segment [{}, {}]", s.start, s.end)));
            }
            if s.end > duration + FRAME_SNAP {
                return Err(self.invalid(format!(
                    "segment [{}, {}] exceeds clip duration {duration}",
                    s.start, s.end
                )));
            }
        }
        for w in self.fake_segments.windows(2) {
            if w[1].start < w[0].start {
                return Err(self.invalid("fake segments not sorted by start"));
            }
            if w[1].start < w[0].end {
                return Err(self.invalid(format!(
                    "overlapping segments [{}, {}] and [{}, {}]",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        if self.is_fake() == self.fake_segments.is_empty() {
            return Err(self.invalid("modification flags disagree with fake segments"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.n_frames as f64 / self.fps
    }

    pub fn is_fake(&self) -> bool {
        self.modify_visual || self.modify_audio
    }

    pub fn modified(&self, m: Modality) -> bool {
        match m {
            Modality::Visual => self.modify_visual,
            Modality::Audio => self.modify_audio,
        }
    }

    fn track_active(&self, track: Track) -> bool {
        match track {
            Track::Shared => self.is_fake(),
            Track::Only(m) => self.modified(m),
        }
    }

    /// Fake segments as half-open frame spans, clipped to the clip length.
    pub fn frame_segments(&self) -> Vec<(usize, usize)> {
        self.fake_segments
            .iter()
            .map(|s| {
                let (a, b) = s.frame_span(self.fps);
                (a.min(self.n_frames), b.min(self.n_frames))
            })
            .filter(|(a, b)| b > a)
            .collect()
    }
}

/// Per-frame binary labels padded to `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    pub values: Vec<f64>,
    pub valid_len: usize,
}

impl FrameLabels {
    pub fn to_array(&self) -> Array {
        Array::new(vec![1, self.values.len()], self.values.clone()).expect("non-empty labels")
    }
}

pub fn frame_labels(record: &VideoRecord, track: Track, t: usize) -> Result<FrameLabels> {
    if t < record.n_frames {
        return Err(record.invalid(format!("T = {t} is shorter than n_frames = {}", record.n_frames)));
    }
    let mut values = vec![0.0; t];
    if record.track_active(track) {
        for (a, b) in record.frame_segments() {
            values[a..b].fill(1.0);
        }
    }
    Ok(FrameLabels {
        values,
        valid_len: record.n_frames,
    })
}

/// `D x T` grid of segment confidences. Cell `(i, j)` scores the frame span
/// `[j, j + i + 1)`: start frame `j`, duration `i + 1` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMap {
    values: Array,
}

impl BoundaryMap {
    pub fn new(values: Array) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape("boundary map", &[values.shape()]));
        }
        Ok(Self { values })
    }

    pub fn zeros(d: usize, t: usize) -> Self {
        Self {
            values: Array::zeros(&[d, t]),
        }
    }

    pub fn d(&self) -> usize {
        self.values.rows()
    }

    pub fn t(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get2(i, j)
    }

    pub fn array(&self) -> &Array {
        &self.values
    }

    pub fn into_array(self) -> Array {
        self.values
    }

    /// Whether cell `(i, j)` describes a span inside a clip of `valid_len` frames.
    pub fn cell_valid(i: usize, j: usize, valid_len: usize) -> bool {
        j + i < valid_len
    }

    /// 0/1 mask of cells whose span fits inside the clip.
    pub fn valid_mask(d: usize, t: usize, valid_len: usize) -> Array {
        Array::from_fn2(d, t, |i, j| f64::from(u8::from(Self::cell_valid(i, j, valid_len))))
    }

    /// Spans of every cell equal to 1.0.
    pub fn peaks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d() {
            for j in 0..self.t() {
                if self.get(i, j) == 1.0 {
                    out.push((j, j + i + 1));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Dense ground-truth boundary map: each valid cell holds the best temporal
/// IoU between its span and any fake segment of the track.
pub fn gt_boundary_map(record: &VideoRecord, track: Track, d: usize, t: usize) -> Result<BoundaryMap> {
    if d == 0 {
        return Err(record.invalid("D must be positive"));
    }
    if t < record.n_frames {
        return Err(record.invalid(format!("T = {t} is shorter than n_frames = {}", record.n_frames)));
    }
    let mut map = Array::zeros(&[d, t]);
    if record.track_active(track) {
        let segments = record.frame_segments();
        for i in 0..d {
            for j in 0..t {
                if !BoundaryMap::cell_valid(i, j, record.n_frames) {
                    continue;
                }
                let cand = (j as f64, (j + i + 1) as f64);
                let best = segments
                    .iter()
                    .map(|&(a, b)| temporal_iou(cand, (a as f64, b as f64)))
                    .fold(0.0, f64::max);
                map.set2(i, j, best);
            }
        }
    }
    BoundaryMap::new(map)
}

/// 1 for a fully real clip (positive pair), 0 when any modality is modified.
pub fn contrastive_label(record: &VideoRecord) -> f64 {
    if record.modify_visual || record.modify_audio {
        0.0
    } else {
        1.0
    }
}

/// Validated collection of records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<VideoRecord>,
}

impl Dataset {
    pub fn new(records: Vec<VideoRecord>) -> Result<Self> {
        for r in &records {
            r.validate()?;
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Σ of per-record frame counts.
    pub fn total_frames(&self) -> usize {
        self.records.iter().map(|r| r.n_frames).sum()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<VideoRecord> = serde_json::from_str(text)?;
        Self::new(records)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.records)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(fps: f64, n: usize, v: bool, a: bool, segs: &[[f64; 2]]) -> VideoRecord {
        VideoRecord {
            id: "clip".into(),
            fps,
            n_frames: n,
            modify_visual: v,
            modify_audio: a,
            fake_segments: segs.iter().map(|&s| s.into()).collect(),
            split: Split::Train,
            transcript_ops: None,
        }
    }

    #[test]
    fn loads_a_single_real_record() {
        let text = r#"[{"id": "r0", "fps": 25, "n_frames": 50, "modify_visual": false,
            "modify_audio": false, "fake_segments": [], "split": "test"}]"#;
        let ds = Dataset::from_json(text).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.total_frames(), 50);
        assert_eq!(ds.records[0].split, Split::Test);
    }

    #[test]
    fn overlapping_segments_name_the_record() {
        let text = r#"[{"id": "bad-7", "fps": 25, "n_frames": 100, "modify_visual": true,
            "modify_audio": false, "fake_segments": [[1.0, 1.5], [1.2, 2.0]], "split": "train"}]"#;
        let err = Dataset::from_json(text).unwrap_err().to_string();
        assert!(err.contains("bad-7") && err.contains("overlapping"), "{err}");
    }

    #[test]
    fn flag_segment_mismatch_and_unknown_keys_are_rejected() {
        let no_segs = r#"[{"id": "x", "fps": 25, "n_frames": 100, "modify_visual": true,
            "modify_audio": false, "fake_segments": [], "split": "train"}]"#;
        assert!(Dataset::from_json(no_segs).is_err());
        let unknown = r#"[{"id": "x", "fps": 25, "n_frames": 100, "modify_visual": false,
            "modify_audio": false, "fake_segments": [], "split": "train", "extra": 1}]"#;
        assert!(Dataset::from_json(unknown).is_err());
        let outside = r#"[{"id": "x", "fps": 25, "n_frames": 10, "modify_visual": true,
            "modify_audio": false, "fake_segments": [[0.1, 0.9]], "split": "train"}]"#;
        assert!(Dataset::from_json(outside).is_err());
    }

    #[test]
    fn round_trip_preserves_fields_bit_exactly() {
        let mut r = record(25.0, 120, true, true, &[[0.123456789, 0.987654321], [1.5, 2.25]]);
        r.transcript_ops = Some(vec![TranscriptOp {
            index: 3,
            original: "safe".into(),
            replacement: "dangerous".into(),
        }]);
        let ds = Dataset::new(vec![r, record(7.5, 40, false, false, &[])]).unwrap();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
        let (a, b) = (&ds.records[0].fake_segments[0], &back.records[0].fake_segments[0]);
        assert_eq!(a.start.to_bits(), b.start.to_bits());
        assert_eq!(a.end.to_bits(), b.end.to_bits());
    }

    #[test]
    fn frame_labels_follow_floor_ceil_convention() {
        let r = record(25.0, 100, true, false, &[[1.0, 1.5]]);
        let labels = frame_labels(&r, Track::Only(Modality::Visual), 128).unwrap();
        let ones: Vec<usize> = (0..128).filter(|&k| labels.values[k] == 1.0).collect();
        assert_eq!(ones, (25..38).collect::<Vec<_>>());
        let audio = frame_labels(&r, Track::Only(Modality::Audio), 128).unwrap();
        assert!(audio.values.iter().all(|&v| v == 0.0));
        assert!(frame_labels(&r, Track::Shared, 99).is_err());
    }

    #[test]
    fn whole_clip_segment_stops_at_padding() {
        let r = record(10.0, 30, true, true, &[[0.0, 3.0]]);
        let labels = frame_labels(&r, Track::Shared, 40).unwrap();
        assert!(labels.values[..30].iter().all(|&v| v == 1.0));
        assert!(labels.values[30..].iter().all(|&v| v == 0.0));
        assert_eq!(labels.valid_len, 30);
    }

    #[test]
    fn real_record_targets_are_zero() {
        let r = record(25.0, 50, false, false, &[]);
        assert!(frame_labels(&r, Track::Shared, 64).unwrap().values.iter().all(|&v| v == 0.0));
        let map = gt_boundary_map(&r, Track::Shared, 8, 64).unwrap();
        assert!(map.array().data().iter().all(|&v| v == 0.0));
        assert_eq!(contrastive_label(&r), 1.0);
    }

    #[test]
    fn gt_map_exact_and_partial_overlap() {
        // frames 2, 3, 4, 5 at fps 1
        let r = record(1.0, 8, true, false, &[[2.0, 6.0]]);
        let map = gt_boundary_map(&r, Track::Shared, 4, 8).unwrap();
        assert_eq!(map.get(3, 2), 1.0);
        // span [1, 5) vs [2, 6): 3 shared frames over 5
        assert!((map.get(3, 1) - 0.6).abs() < 1e-15);
        // span [4, 8) ends on the last frame; [5, 9) would not fit
        assert!(map.get(3, 4) > 0.0);
        assert_eq!(map.get(3, 5), 0.0);
        assert_eq!(map.peaks(), vec![(2, 6)]);
    }

    #[test]
    fn per_modality_maps_use_flags() {
        let r = record(5.0, 40, false, true, &[[1.0, 1.6]]);
        let v = gt_boundary_map(&r, Track::Only(Modality::Visual), 8, 64).unwrap();
        let a = gt_boundary_map(&r, Track::Only(Modality::Audio), 8, 64).unwrap();
        assert!(v.array().data().iter().all(|&x| x == 0.0));
        assert_eq!(a.peaks(), vec![(5, 8)]);
    }

    #[test]
    fn contrastive_labels() {
        assert_eq!(contrastive_label(&record(5.0, 40, false, false, &[])), 1.0);
        assert_eq!(contrastive_label(&record(5.0, 40, true, false, &[[1.0, 1.4]])), 0.0);
        assert_eq!(contrastive_label(&record(5.0, 40, true, true, &[[1.0, 1.4]])), 0.0);
    }
}
