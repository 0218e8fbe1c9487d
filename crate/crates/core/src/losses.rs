//! Training objectives. Every loss masks padded frames and divides by the
//! number of real frames in the batch (`frames_total`), so a batch loss is
//! the sum of its samples' contributions.

use serde::{Deserialize, Serialize};

use crate::annotations::{
    contrastive_label, frame_labels, gt_boundary_map, BoundaryMap, Modality, Track, VideoRecord,
};
use crate::autodiff::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::model::ForwardVars;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_f: f64,
    pub lambda_b: f64,
    pub lambda_bm: f64,
    /// Contrastive margin.
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 0.1,
            lambda_f: 2.0,
            lambda_b: 1.0,
            lambda_bm: 1.0,
            margin: 0.99,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ls = [self.lambda_c, self.lambda_f, self.lambda_b, self.lambda_bm];
        if ls.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Values of the four losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub contrastive: f64,
    pub frame: f64,
    pub boundary: f64,
    pub multimodal: f64,
}

impl LossParts {
    pub fn names(&self) -> [(&'static str, f64); 4] {
        [
            ("contrastive", self.contrastive),
            ("frame", self.frame),
            ("boundary", self.boundary),
            ("multimodal boundary", self.multimodal),
        ]
    }

    pub fn add(&mut self, other: &LossParts) {
        self.contrastive += other.contrastive;
        self.frame += other.frame;
        self.boundary += other.boundary;
        self.multimodal += other.multimodal;
    }
}

/// `λ_b L_b + λ_bm L_bm + λ_f L_f + λ_c L_c`, rejecting non-finite parts.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    check_finite(parts)?;
    Ok(w.lambda_b * parts.boundary
        + w.lambda_bm * parts.multimodal
        + w.lambda_f * parts.frame
        + w.lambda_c * parts.contrastive)
}

fn check_finite(parts: &LossParts) -> Result<()> {
    for (name, v) in parts.names() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    Ok(())
}

fn check_frames(valid_len: usize, t: usize, frames_total: usize) -> Result<()> {
    if valid_len == 0 || valid_len > t || frames_total < valid_len {
        return Err(Error::Invalid(format!(
            "valid length {valid_len} with padded length {t} and batch frame total {frames_total}"
        )));
    }
    Ok(())
}

fn frame_mask(rows: usize, t: usize, valid_len: usize) -> Array {
    Array::from_fn2(rows, t, |_, j| if j < valid_len { 1.0 } else { 0.0 })
}

fn masked_sum(g: &mut Graph, x: Var, mask: Array) -> Result<Var> {
    let m = g.constant(mask);
    let y = g.mul(x, m)?;
    Ok(g.sum(y))
}

/// `1/(C_f ΣT) Σ_t [Y d_t² + (1 - Y) max(δ - d_t, 0)²]` with
/// `d_t = ||z_v[:, t] - z_a[:, t]||`.
pub fn contrastive_loss(
    g: &mut Graph,
    z_v: Var,
    z_a: Var,
    label: f64,
    margin: f64,
    valid_len: usize,
    frames_total: usize,
) -> Result<Var> {
    let diff = g.sub(z_v, z_a)?;
    let (c, t) = (g.shape(diff)[0], g.shape(diff)[1]);
    check_frames(valid_len, t, frames_total)?;
    let mut terms = None;
    if label != 0.0 {
        let sq = g.square(diff);
        let mask = Array::from_fn2(c, t, |_, j| if j < valid_len { label } else { 0.0 });
        terms = Some(masked_sum(g, sq, mask)?);
    }
    if label != 1.0 {
        let d = g.l2_norm_channels(diff)?;
        let neg = g.scale(d, -1.0);
        let gap = g.add_scalar(neg, margin);
        let hinge = g.relu(gap);
        let hinge = g.square(hinge);
        let mask = Array::from_fn2(1, t, |_, j| if j < valid_len { 1.0 - label } else { 0.0 });
        let s = masked_sum(g, hinge, mask)?;
        terms = Some(match terms {
            Some(p) => g.add(p, s)?,
            None => s,
        });
    }
    let total = terms.expect("label is 0, 1 or in between");
    Ok(g.scale(total, 1.0 / (c * frames_total) as f64))
}

/// `1/(2 ΣT)` times the clamped binary cross-entropy over both modalities'
/// valid frames.
pub fn frame_loss(
    g: &mut Graph,
    pred_v: Var,
    pred_a: Var,
    labels_v: &Array,
    labels_a: &Array,
    valid_len: usize,
    frames_total: usize,
) -> Result<Var> {
    let t = g.shape(pred_v)[1];
    check_frames(valid_len, t, frames_total)?;
    let bv = g.bce(pred_v, labels_v)?;
    let sv = masked_sum(g, bv, frame_mask(1, t, valid_len))?;
    let ba = g.bce(pred_a, labels_a)?;
    let sa = masked_sum(g, ba, frame_mask(1, t, valid_len))?;
    let s = g.add(sv, sa)?;
    Ok(g.scale(s, 1.0 / (2 * frames_total) as f64))
}

fn map_sq_err(g: &mut Graph, pred: Var, label: &BoundaryMap, valid_len: usize) -> Result<Var> {
    let (d, t) = (label.d(), label.t());
    let target = g.constant(label.array().clone());
    let e = g.sq_err(pred, target)?;
    masked_sum(g, e, BoundaryMap::valid_mask(d, t, valid_len))
}

/// `1/(3D ΣT) Σ_α Σ (Ŷ_α - Y)²` over valid cells of the fused maps.
pub fn boundary_loss(
    g: &mut Graph,
    fused: [Var; 3],
    label: &BoundaryMap,
    valid_len: usize,
    frames_total: usize,
) -> Result<Var> {
    check_frames(valid_len, label.t(), frames_total)?;
    let mut acc = map_sq_err(g, fused[0], label, valid_len)?;
    for &m in &fused[1..] {
        let e = map_sq_err(g, m, label, valid_len)?;
        acc = g.add(acc, e)?;
    }
    Ok(g.scale(acc, 1.0 / (3 * label.d() * frames_total) as f64))
}

/// `1/(2D ΣT) Σ_m Σ_α Σ (Ŷ_{m,α} - Y_m)²` over valid cells of the six
/// per-modality maps.
pub fn multimodal_boundary_loss(
    g: &mut Graph,
    maps_v: [Var; 3],
    maps_a: [Var; 3],
    label_v: &BoundaryMap,
    label_a: &BoundaryMap,
    valid_len: usize,
    frames_total: usize,
) -> Result<Var> {
    check_frames(valid_len, label_v.t(), frames_total)?;
    let mut acc = map_sq_err(g, maps_v[0], label_v, valid_len)?;
    for (m, label) in maps_v[1..]
        .iter()
        .map(|m| (m, label_v))
        .chain(maps_a.iter().map(|m| (m, label_a)))
    {
        let e = map_sq_err(g, *m, label, valid_len)?;
        acc = g.add(acc, e)?;
    }
    Ok(g.scale(acc, 1.0 / (2 * label_v.d() * frames_total) as f64))
}

/// Every label a sample contributes to the losses.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTargets {
    pub frames_v: Array,
    pub frames_a: Array,
    pub boundary: BoundaryMap,
    pub boundary_v: BoundaryMap,
    pub boundary_a: BoundaryMap,
    pub contrastive: f64,
    pub valid_len: usize,
}

impl SampleTargets {
    pub fn from_record(record: &VideoRecord, d: usize, t: usize) -> Result<Self> {
        let v = Track::Only(Modality::Visual);
        let a = Track::Only(Modality::Audio);
        Ok(Self {
            frames_v: frame_labels(record, v, t)?.to_array(),
            frames_a: frame_labels(record, a, t)?.to_array(),
            boundary: gt_boundary_map(record, Track::Shared, d, t)?,
            boundary_v: gt_boundary_map(record, v, d, t)?,
            boundary_a: gt_boundary_map(record, a, d, t)?,
            contrastive: contrastive_label(record),
            valid_len: record.n_frames,
        })
    }
}

/// Graph handles of the four losses and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub contrastive: Var,
    pub frame: Var,
    pub boundary: Var,
    pub multimodal: Var,
    pub total: Var,
}

impl LossVars {
    pub fn parts(&self, g: &Graph) -> LossParts {
        LossParts {
            contrastive: g.scalar(self.contrastive),
            frame: g.scalar(self.frame),
            boundary: g.scalar(self.boundary),
            multimodal: g.scalar(self.multimodal),
        }
    }
}

/// One sample's share of the batch objective.
pub fn sample_loss(
    g: &mut Graph,
    out: &ForwardVars,
    targets: &SampleTargets,
    w: &LossWeights,
    frames_total: usize,
) -> Result<LossVars> {
    let n = targets.valid_len;
    let contrastive = contrastive_loss(g, out.z_v, out.z_a, targets.contrastive, w.margin, n, frames_total)?;
    let frame = frame_loss(
        g,
        out.frames_v,
        out.frames_a,
        &targets.frames_v,
        &targets.frames_a,
        n,
        frames_total,
    )?;
    let boundary = boundary_loss(g, out.fused, &targets.boundary, n, frames_total)?;
    let multimodal = multimodal_boundary_loss(
        g,
        out.maps_v,
        out.maps_a,
        &targets.boundary_v,
        &targets.boundary_a,
        n,
        frames_total,
    )?;
    let vars = [
        (boundary, w.lambda_b),
        (multimodal, w.lambda_bm),
        (frame, w.lambda_f),
        (contrastive, w.lambda_c),
    ];
    let mut parts = LossVars {
        contrastive,
        frame,
        boundary,
        multimodal,
        total: boundary,
    };
    check_finite(&parts.parts(g))?;
    let mut total = g.scale(vars[0].0, vars[0].1);
    for &(v, l) in &vars[1..] {
        let s = g.scale(v, l);
        total = g.add(total, s)?;
    }
    parts.total = total;
    Ok(parts)
}
