use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Graph, Var};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
/// Additive score for padded attention keys.
pub(crate) const MASKED: f64 = -1e9;

/// Named parameter arrays, addressed by insertion index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
    rng: Option<ChaCha8Rng>,
}

impl ParamStore {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            arrays: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub(crate) fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = self.rng.as_mut().expect("store is still being built");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(name, Array::new(shape.to_vec(), data).expect("shape"))
    }

    pub(crate) fn constant(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.push(name, Array::full(shape, value))
    }

    fn push(&mut self, name: String, a: Array) -> usize {
        self.names.push(name);
        self.arrays.push(a);
        self.arrays.len() - 1
    }

    pub(crate) fn finish(mut self) -> Self {
        self.rng = None;
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    /// Replaces every array; names and shapes must match.
    pub fn replace(&mut self, named: Vec<(String, Array)>) -> Result<()> {
        if named.len() != self.arrays.len() {
            return Err(Error::Format(format!(
                "expected {} parameter arrays, found {}",
                self.arrays.len(),
                named.len()
            )));
        }
        for (k, (name, a)) in named.iter().enumerate() {
            if *name != self.names[k] || a.shape() != self.arrays[k].shape() {
                return Err(Error::Format(format!(
                    "parameter {k}: expected {} {:?}, found {name} {:?}",
                    self.names[k],
                    self.arrays[k].shape(),
                    a.shape()
                )));
            }
        }
        self.arrays = named.into_iter().map(|(_, a)| a).collect();
        Ok(())
    }
}

/// 1D convolution with bias.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    pad_left: usize,
    pad_right: usize,
}

impl Conv {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Self {
        Self {
            w: store.uniform(format!("{name}.w"), &[c_out, c_in, k], c_in * k),
            b: store.uniform(format!("{name}.b"), &[c_out], c_in * k),
            pad_left,
            pad_right,
        }
    }

    /// Kernel 3 with one column of padding on each side.
    pub(crate) fn same(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Self {
        Self::new(store, name, c_in, c_out, 3, 1, 1)
    }

    pub(crate) fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        g.conv1d(x, p[self.w], Some(p[self.b]), self.pad_left, self.pad_right)
    }
}

/// Per-frame affine map `W x + b` over the channel axis.
#[derive(Clone, Debug)]
pub(crate) struct Dense {
    w: usize,
    b: usize,
}

impl Dense {
    pub(crate) fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            w: store.uniform(format!("{name}.w"), &[c_out, c_in], c_in),
            b: store.uniform(format!("{name}.b"), &[c_out], c_in),
        }
    }

    pub(crate) fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let t = g.shape(x)[1];
        let y = g.matmul(p[self.w], x)?;
        let b = g.broadcast_cols(p[self.b], t)?;
        g.add(y, b)
    }
}

/// Layer norm over channels with a learned per-channel gain and bias.
#[derive(Clone, Debug)]
pub(crate) struct Norm {
    gain: usize,
    bias: usize,
}

impl Norm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gain: store.constant(format!("{name}.gain"), &[c], 1.0),
            bias: store.constant(format!("{name}.bias"), &[c], 0.0),
        }
    }

    pub(crate) fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let t = g.shape(x)[1];
        let n = g.layer_norm_channels(x, LN_EPS)?;
        let gain = g.broadcast_cols(p[self.gain], t)?;
        let bias = g.broadcast_cols(p[self.bias], t)?;
        let y = g.mul(n, gain)?;
        g.add(y, bias)
    }
}

/// Multi-head self-attention over the time axis of a `[c, t]` input.
#[derive(Clone, Debug)]
pub(crate) struct TemporalAttention {
    heads: Vec<[usize; 3]>,
    out: Dense,
    head_dim: usize,
}

impl TemporalAttention {
    pub(crate) fn new(store: &mut ParamStore, name: &str, c: usize, heads: usize) -> Self {
        let head_dim = c.div_ceil(heads);
        let hs = (0..heads)
            .map(|h| {
                [
                    store.uniform(format!("{name}.h{h}.q"), &[head_dim, c], c),
                    store.uniform(format!("{name}.h{h}.k"), &[head_dim, c], c),
                    store.uniform(format!("{name}.h{h}.v"), &[head_dim, c], c),
                ]
            })
            .collect();
        Self {
            heads: hs,
            out: Dense::new(store, &format!("{name}.out"), head_dim * heads, c),
            head_dim,
        }
    }

    /// `mask` is a constant `[t, t]` added to the key-by-query scores.
    pub(crate) fn apply(&self, g: &mut Graph, p: &[Var], x: Var, mask: Var) -> Result<Var> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads.len());
        for &[wq, wk, wv] in &self.heads {
            let q = g.matmul(p[wq], x)?;
            let k = g.matmul(p[wk], x)?;
            let v = g.matmul(p[wv], x)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(kt, q)?;
            let scores = g.scale(scores, scale);
            let scores = g.add(scores, mask)?;
            let attn = g.softmax(scores, 0)?;
            outs.push(g.matmul(v, attn)?);
        }
        let cat = g.concat(&outs, 0)?;
        self.out.apply(g, p, cat)
    }
}

/// `[t, t]` additive mask hiding keys at or beyond `valid_len`.
pub(crate) fn key_mask(t: usize, valid_len: usize) -> Array {
    Array::from_fn2(t, t, |k, _| if k < valid_len { 0.0 } else { MASKED })
}

/// `[rows, t]` with ones on valid frames.
pub(crate) fn frame_mask(rows: usize, t: usize, valid_len: usize) -> Array {
    Array::from_fn2(rows, t, |_, j| if j < valid_len { 1.0 } else { 0.0 })
}
