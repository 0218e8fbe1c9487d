//! The localization network: per-modality encoders, frame classifiers and
//! boundary modules, followed by a learned weighted fusion of the two
//! modalities' boundary maps.

mod checkpoint;
mod layers;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointKind, CheckpointMeta};
pub use layers::ParamStore;

use crate::annotations::BoundaryMap;
use crate::autodiff::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::synthgen::FeatureClip;
use layers::{frame_mask, key_mask, Conv, Dense, Norm, TemporalAttention};

/// Floor added to the softplus fusion weights.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub c_f: usize,
    pub t: usize,
    pub d: usize,
    pub c_v: usize,
    pub f_m: usize,
    pub tau_a: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Hidden channels of the boundary modules.
    pub c_h: usize,
    /// Hidden channels of the fusion-weight networks.
    pub fusion_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_f: 32,
            t: 64,
            d: 8,
            c_v: 8,
            f_m: 16,
            tau_a: 4,
            blocks: 2,
            heads: 2,
            c_h: 32,
            fusion_hidden: 8,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            c_f: 4,
            t: 8,
            d: 3,
            c_v: 2,
            f_m: 2,
            tau_a: 2,
            blocks: 1,
            heads: 2,
            c_h: 4,
            fusion_hidden: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.c_f,
            self.t,
            self.d,
            self.c_v,
            self.f_m,
            self.tau_a,
            self.blocks,
            self.heads,
            self.c_h,
            self.fusion_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.d > self.t {
            return Err(Error::Config(format!("d = {} exceeds t = {}", self.d, self.t)));
        }
        Ok(())
    }

    pub fn audio_rows(&self) -> usize {
        self.tau_a * self.f_m
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv,
    norm: Norm,
    attn: TemporalAttention,
    mlp_in: Dense,
    mlp_out: Dense,
    residual: bool,
}

#[derive(Clone, Debug)]
struct Encoder {
    blocks: Vec<Block>,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, cfg: &ModelConfig) -> Self {
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let n = format!("{name}.{b}");
                let cin = if b == 0 { c_in } else { cfg.c_f };
                Block {
                    conv: Conv::same(store, &format!("{n}.conv"), cin, cfg.c_f),
                    norm: Norm::new(store, &format!("{n}.norm"), cfg.c_f),
                    attn: TemporalAttention::new(store, &format!("{n}.attn"), cfg.c_f, cfg.heads),
                    mlp_in: Dense::new(store, &format!("{n}.mlp_in"), cfg.c_f, 2 * cfg.c_f),
                    mlp_out: Dense::new(store, &format!("{n}.mlp_out"), 2 * cfg.c_f, cfg.c_f),
                    residual: b > 0,
                }
            })
            .collect();
        Self { blocks }
    }

    fn apply(&self, g: &mut Graph, p: &[Var], x: Var, mask: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            let mut y = b.conv.apply(g, p, h)?;
            if b.residual {
                y = g.add(y, h)?;
            }
            let y = b.norm.apply(g, p, y)?;
            let a = b.attn.apply(g, p, y, mask)?;
            let y = g.add(y, a)?;
            let m = b.mlp_in.apply(g, p, y)?;
            let m = g.relu(m);
            let m = b.mlp_out.apply(g, p, m)?;
            h = g.add(y, m)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct BoundaryModule {
    stem: Conv,
    pos_attn: TemporalAttention,
    pos_conv: Conv,
    pos_map: Conv,
    chan_conv: Conv,
    chan_map: Conv,
    pc: Conv,
}

impl BoundaryModule {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Self {
        let (c, d) = (cfg.c_h, cfg.d);
        // output column j sees input columns j-1 ..= j+d
        let wide = |store: &mut ParamStore, n: &str| Conv::new(store, n, c, d, d + 2, 1, d);
        Self {
            stem: Conv::same(store, &format!("{name}.stem"), cfg.c_f + 1, c),
            pos_attn: TemporalAttention::new(store, &format!("{name}.pos.attn"), c, cfg.heads),
            pos_conv: Conv::same(store, &format!("{name}.pos.conv"), c, c),
            pos_map: wide(store, &format!("{name}.pos.map")),
            chan_conv: Conv::same(store, &format!("{name}.chan.conv"), c, c),
            chan_map: wide(store, &format!("{name}.chan.map")),
            pc: Conv::new(store, &format!("{name}.pc"), 2 * d, d, 1, 0, 0),
        }
    }

    /// Returns the position, channel and position-channel maps.
    fn apply(
        &self,
        g: &mut Graph,
        p: &[Var],
        z: Var,
        frames: Var,
        mask: Var,
        valid: Var,
    ) -> Result<[Var; 3]> {
        let x = g.concat(&[z, frames], 0)?;
        let s = self.stem.apply(g, p, x)?;
        let s = g.relu(s);
        let s = g.mul(s, valid)?;

        let a = self.pos_attn.apply(g, p, s, mask)?;
        let hp = g.add(s, a)?;
        let hp = self.pos_conv.apply(g, p, hp)?;
        let hp = g.relu(hp);
        let hp = g.mul(hp, valid)?;
        let map_p = self.pos_map.apply(g, p, hp)?;
        let map_p = g.sigmoid(map_p);

        let t = g.shape(s)[1] as f64;
        let st = g.transpose(s)?;
        let gram = g.matmul(s, st)?;
        let gram = g.scale(gram, 1.0 / t.sqrt());
        let attn = g.softmax(gram, 1)?;
        let mixed = g.matmul(attn, s)?;
        let hc = g.add(s, mixed)?;
        let hc = self.chan_conv.apply(g, p, hc)?;
        let hc = g.relu(hc);
        let hc = g.mul(hc, valid)?;
        let map_c = self.chan_map.apply(g, p, hc)?;
        let map_c = g.sigmoid(map_c);

        let both = g.concat(&[map_p, map_c], 0)?;
        let map_pc = self.pc.apply(g, p, both)?;
        let map_pc = g.sigmoid(map_pc);
        Ok([map_p, map_c, map_pc])
    }
}

#[derive(Clone, Debug)]
struct FusionNet {
    hidden: Conv,
    out: Conv,
}

impl FusionNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Self {
        Self {
            hidden: Conv::same(store, &format!("{name}.hidden"), 3 * cfg.d, cfg.fusion_hidden),
            out: Conv::same(store, &format!("{name}.out"), cfg.fusion_hidden, cfg.d),
        }
    }

    /// Strictly positive `[d, t]` weights from a map and the two latents'
    /// per-frame channel means.
    fn apply(&self, g: &mut Graph, p: &[Var], map: Var, summary: Var) -> Result<Var> {
        let x = g.concat(&[map, summary], 0)?;
        let h = self.hidden.apply(g, p, x)?;
        let h = g.relu(h);
        let w = self.out.apply(g, p, h)?;
        let w = g.softplus(w);
        Ok(g.add_scalar(w, WEIGHT_FLOOR))
    }
}

/// Graph handles of one forward pass. Map triples are ordered
/// position, channel, position-channel.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub z_v: Var,
    pub z_a: Var,
    pub frames_v: Var,
    pub frames_a: Var,
    pub maps_v: [Var; 3],
    pub maps_a: [Var; 3],
    pub weights_v: [Var; 3],
    pub weights_a: [Var; 3],
    pub fused: [Var; 3],
}

/// Concrete values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    pub z_v: Array,
    pub z_a: Array,
    /// `[1, t]` frame scores.
    pub frames_v: Array,
    pub frames_a: Array,
    pub maps_v: [BoundaryMap; 3],
    pub maps_a: [BoundaryMap; 3],
    pub weights_v: [Array; 3],
    pub weights_a: [Array; 3],
    pub fused: [BoundaryMap; 3],
}

impl ModelOutputs {
    pub fn from_graph(g: &Graph, v: &ForwardVars) -> Result<Self> {
        let map = |x: Var| BoundaryMap::new(g.value(x).clone());
        let maps = |xs: [Var; 3]| -> Result<[BoundaryMap; 3]> { Ok([map(xs[0])?, map(xs[1])?, map(xs[2])?]) };
        let arrs = |xs: [Var; 3]| [g.value(xs[0]).clone(), g.value(xs[1]).clone(), g.value(xs[2]).clone()];
        Ok(Self {
            z_v: g.value(v.z_v).clone(),
            z_a: g.value(v.z_a).clone(),
            frames_v: g.value(v.frames_v).clone(),
            frames_a: g.value(v.frames_a).clone(),
            maps_v: maps(v.maps_v)?,
            maps_a: maps(v.maps_a)?,
            weights_v: arrs(v.weights_v),
            weights_a: arrs(v.weights_a),
            fused: maps(v.fused)?,
        })
    }
}

/// `(W_v Y_v + W_a Y_a) / (W_v + W_a)`, element-wise.
pub fn weighted_fuse(map_v: &Array, map_a: &Array, w_v: &Array, w_a: &Array) -> Result<Array> {
    let shape = map_v.shape();
    if map_a.shape() != shape || w_v.shape() != shape || w_a.shape() != shape {
        return Err(Error::shape(
            "weighted_fuse",
            &[shape, map_a.shape(), w_v.shape(), w_a.shape()],
        ));
    }
    let mut out = Vec::with_capacity(map_v.len());
    for k in 0..map_v.len() {
        let (wv, wa) = (w_v.data()[k], w_a.data()[k]);
        let sum = wv + wa;
        if !(sum > 0.0) {
            return Err(Error::Invalid(format!("fusion weights sum to {sum} at cell {k}")));
        }
        out.push((wv * map_v.data()[k] + wa * map_a.data()[k]) / sum);
    }
    Array::new(shape.to_vec(), out)
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    enc_v: Encoder,
    enc_a: Encoder,
    cls_v: Dense,
    cls_a: Dense,
    bnd_v: BoundaryModule,
    bnd_a: BoundaryModule,
    fusion_v: [FusionNet; 3],
    fusion_a: [FusionNet; 3],
}

const ALPHAS: [&str; 3] = ["p", "c", "pc"];

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut s = ParamStore::new(seed);
        let cfg = &config;
        let enc_v = Encoder::new(&mut s, "enc_v", cfg.c_v, cfg);
        let enc_a = Encoder::new(&mut s, "enc_a", cfg.audio_rows(), cfg);
        let cls_v = Dense::new(&mut s, "cls_v", cfg.c_f, 1);
        let cls_a = Dense::new(&mut s, "cls_a", cfg.c_f, 1);
        let bnd_v = BoundaryModule::new(&mut s, "bnd_v", cfg);
        let bnd_a = BoundaryModule::new(&mut s, "bnd_a", cfg);
        let fusion_v = ALPHAS.map(|a| FusionNet::new(&mut s, &format!("fuse_v.{a}"), cfg));
        let fusion_a = ALPHAS.map(|a| FusionNet::new(&mut s, &format!("fuse_a.{a}"), cfg));
        Ok(Self {
            config,
            store: s.finish(),
            enc_v,
            enc_a,
            cls_v,
            cls_a,
            bnd_v,
            bnd_a,
            fusion_v,
            fusion_a,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Adds every parameter to `g`, as differentiable leaves when
    /// `trainable`, else as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.store
            .arrays()
            .iter()
            .map(|a| if trainable { g.var(a.clone()) } else { g.constant(a.clone()) })
            .collect()
    }

    fn check_inputs(&self, visual: &Array, audio: &Array, valid_len: usize) -> Result<()> {
        let c = &self.config;
        if visual.shape() != [c.c_v, c.t] || audio.shape() != [c.audio_rows(), c.t] {
            return Err(Error::shape(
                "model input",
                &[visual.shape(), audio.shape(), &[c.c_v, c.audio_rows(), c.t]],
            ));
        }
        if valid_len == 0 || valid_len > c.t {
            return Err(Error::Invalid(format!("valid length {valid_len} outside [1, {}]", c.t)));
        }
        Ok(())
    }

    /// Builds the forward pass into `g` using parameter handles from
    /// [`bind`](Self::bind).
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &[Var],
        visual: &Array,
        audio: &Array,
        valid_len: usize,
    ) -> Result<ForwardVars> {
        self.check_inputs(visual, audio, valid_len)?;
        let c = &self.config;
        let mask = g.constant(key_mask(c.t, valid_len));
        let valid = g.constant(frame_mask(c.c_h, c.t, valid_len));
        let xv = g.constant(mask_padding(visual, valid_len));
        let xa = g.constant(mask_padding(audio, valid_len));

        let z_v = self.enc_v.apply(g, p, xv, mask)?;
        let z_a = self.enc_a.apply(g, p, xa, mask)?;

        let fv = self.cls_v.apply(g, p, z_v)?;
        let frames_v = g.sigmoid(fv);
        let fa = self.cls_a.apply(g, p, z_a)?;
        let frames_a = g.sigmoid(fa);

        let maps_v = self.bnd_v.apply(g, p, z_v, frames_v, mask, valid)?;
        let maps_a = self.bnd_a.apply(g, p, z_a, frames_a, mask, valid)?;

        let mean_row = g.constant(Array::full(&[1, c.c_f], 1.0 / c.c_f as f64));
        let sv = g.matmul(mean_row, z_v)?;
        let sv = g.broadcast_rows(sv, c.d)?;
        let sa = g.matmul(mean_row, z_a)?;
        let sa = g.broadcast_rows(sa, c.d)?;
        let summary = g.concat(&[sv, sa], 0)?;

        let mut weights_v = [maps_v[0]; 3];
        let mut weights_a = [maps_v[0]; 3];
        let mut fused = [maps_v[0]; 3];
        for k in 0..3 {
            let wv = self.fusion_v[k].apply(g, p, maps_v[k], summary)?;
            let wa = self.fusion_a[k].apply(g, p, maps_a[k], summary)?;
            let num_v = g.mul(wv, maps_v[k])?;
            let num_a = g.mul(wa, maps_a[k])?;
            let num = g.add(num_v, num_a)?;
            let den = g.add(wv, wa)?;
            weights_v[k] = wv;
            weights_a[k] = wa;
            fused[k] = g.div(num, den)?;
        }
        Ok(ForwardVars {
            z_v,
            z_a,
            frames_v,
            frames_a,
            maps_v,
            maps_a,
            weights_v,
            weights_a,
            fused,
        })
    }

    /// Inference on one clip.
    pub fn forward(&self, clip: &FeatureClip) -> Result<ModelOutputs> {
        self.forward_arrays(&clip.visual, &clip.audio, clip.valid_len())
    }

    pub fn forward_arrays(&self, visual: &Array, audio: &Array, valid_len: usize) -> Result<ModelOutputs> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let v = self.forward_graph(&mut g, &p, visual, audio, valid_len)?;
        ModelOutputs::from_graph(&g, &v)
    }
}

fn mask_padding(x: &Array, valid_len: usize) -> Array {
    let [r, t] = [x.shape()[0], x.shape()[1]];
    Array::from_fn2(r, t, |i, j| if j < valid_len { x.get2(i, j) } else { 0.0 })
}
