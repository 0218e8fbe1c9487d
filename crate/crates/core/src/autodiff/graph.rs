use super::array::Array;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Borrowed view of one node: its values, shape and (after backward) gradient.
#[derive(Debug, Clone, Copy)]
pub struct DiffArray<'g> {
    pub id: Var,
    pub shape: &'g [usize],
    pub values: &'g [f64],
    pub grad: Option<&'g [f64]>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad_left: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Square(Var),
    Recip(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SqErr(Var, Var),
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
    L2NormChannels(Var),
    Transpose(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Reshape(Var),
}

struct Node {
    value: Array,
    op: Op,
    tracked: bool,
}

/// Define-by-run computation graph.
///
/// Every op appends a node holding its forward value and enough state to run
/// its backward rule. A graph lives for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Clamp bound applied to predictions inside [`Graph::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf (labels, masks).
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn array(&self, v: Var) -> DiffArray<'_> {
        let node = &self.nodes[v.0];
        DiffArray {
            id: v,
            shape: node.value.shape(),
            values: node.value.data(),
            grad: self.grad(v),
        }
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, &[s]));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Array::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let tracked = self.tracked(&[x]);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Elementwise `1 / x`.
    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    /// Elementwise `a / b`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let r = self.recip(b);
        self.mul(a, r)
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", &[self.shape(a), self.shape(b)]));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(Array::new(vec![m, n], out)?, Op::MatMul(a, b), tracked))
    }

    /// 1D convolution over the column (time) axis.
    ///
    /// `x: [c_in, t]`, `w: [c_out, c_in, k]`, optional `b: [c_out]`. The input
    /// is zero-padded by `pad_left`/`pad_right` columns; the output has
    /// `t + pad_left + pad_right - k + 1` columns.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var> {
        let (c_in, t) = self.dims2("conv1d", x)?;
        let ws = self.shape(w);
        if ws.len() != 3 || ws[1] != c_in || t + pad_left + pad_right < ws[2] {
            return Err(Error::shape("conv1d", &[self.shape(x), ws]));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv1d", &[self.shape(w), self.shape(b)]));
            }
        }
        let t_out = t + pad_left + pad_right - k + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; c_out * t_out];
        for o in 0..c_out {
            let orow = &mut out[o * t_out..(o + 1) * t_out];
            if let Some(b) = b {
                orow.fill(self.nodes[b.0].value.data()[o]);
            }
            for c in 0..c_in {
                let xrow = &xv[c * t..(c + 1) * t];
                for kk in 0..k {
                    let wk = wv[(o * c_in + c) * k + kk];
                    if wk == 0.0 {
                        continue;
                    }
                    let (lo, hi) = conv_range(kk, pad_left, t, t_out);
                    let shift = kk as isize - pad_left as isize;
                    for (ot, o_val) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                        *o_val += wk * xrow[(ot as isize + shift) as usize];
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let tracked = self.tracked(&inputs);
        Ok(self.push(
            Array::new(vec![c_out, t_out], out)?,
            Op::Conv1d { x, w, b, pad_left },
            tracked,
        ))
    }

    /// Concatenate rank-2 arrays along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::Shape {
                op: "concat",
                shapes: format!("{} parts on axis {axis}", parts.len()),
            });
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.dims2("concat", p)?);
        }
        let other = if axis == 0 { dims[0].1 } else { dims[0].0 };
        if dims
            .iter()
            .any(|&(r, c)| if axis == 0 { c != other } else { r != other })
        {
            let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
            return Err(Error::shape("concat", &shapes));
        }
        let value = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * other);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Array::new(vec![rows, other], data)?
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(other * cols);
            for r in 0..other {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Array::new(vec![other, cols], data)?
        };
        let tracked = self.tracked(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    /// Softmax of a rank-2 array along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2("softmax", x)?;
        if axis > 1 {
            return Err(Error::shape("softmax", &[self.shape(x)]));
        }
        let mut out = self.value(x).data().to_vec();
        for_each_lane(r, c, axis, |idx| {
            let m = idx.clone().map(|i| out[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for i in idx.clone() {
                out[i] = (out[i] - m).exp();
                s += out[i];
            }
            for i in idx {
                out[i] /= s;
            }
        });
        let tracked = self.tracked(&[x]);
        Ok(self.push(Array::new(vec![r, c], out)?, Op::Softmax { x, axis }, tracked))
    }

    /// Normalize each column of a `[channels, t]` array to zero mean, unit variance.
    pub fn layer_norm_channels(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (ch, t) = self.dims2("layer_norm", x)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; ch * t];
        let mut inv_std = vec![0.0; t];
        for col in 0..t {
            let mean = (0..ch).map(|c| xv[c * t + col]).sum::<f64>() / ch as f64;
            let var = (0..ch)
                .map(|c| (xv[c * t + col] - mean).powi(2))
                .sum::<f64>()
                / ch as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[col] = is;
            for c in 0..ch {
                out[c * t + col] = (xv[c * t + col] - mean) * is;
            }
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            Array::new(vec![ch, t], out)?,
            Op::LayerNorm { x, inv_std },
            tracked,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.tracked(&[x]);
        self.push(Array::scalar(s), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let tracked = self.tracked(&[x]);
        self.push(Array::scalar(s), Op::Mean(x), tracked)
    }

    /// Elementwise `(a - b)^2`.
    pub fn sq_err(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sq_err", a, b)?;
        let value = self.zip_map(a, b, |x, y| (x - y) * (x - y));
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::SqErr(a, b), tracked))
    }

    /// Elementwise binary cross-entropy `-(y ln p + (1-y) ln(1-p))` with
    /// predictions clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, pred: Var, target: &Array) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape("bce", &[self.shape(pred), target.shape()]));
        }
        let pv = self.value(pred);
        let data = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .collect();
        let value = Array::new(pv.shape().to_vec(), data)?;
        let tracked = self.tracked(&[pred]);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            tracked,
        ))
    }

    /// Per-column Euclidean norm of a `[channels, t]` array, shape `[1, t]`.
    pub fn l2_norm_channels(&mut self, x: Var) -> Result<Var> {
        let (ch, t) = self.dims2("l2_norm", x)?;
        let xv = self.value(x).data();
        let out = (0..t)
            .map(|col| (0..ch).map(|c| xv[c * t + col].powi(2)).sum::<f64>().sqrt())
            .collect();
        let tracked = self.tracked(&[x]);
        Ok(self.push(Array::new(vec![1, t], out)?, Op::L2NormChannels(x), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Array::new(vec![c, r], out)?, Op::Transpose(x), tracked))
    }

    /// Repeat a `[1, n]` row `rows` times, giving `[rows, n]`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (r, n) = self.dims2("broadcast_rows", x)?;
        if r != 1 || rows == 0 {
            return Err(Error::shape("broadcast_rows", &[self.shape(x), &[rows, n]]));
        }
        let row = self.value(x).data();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(row);
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Array::new(vec![rows, n], out)?, Op::BroadcastRows(x), tracked))
    }

    /// Repeat a column vector (`[m]` or `[m, 1]`) `cols` times, giving `[m, cols]`.
    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var> {
        let s = self.shape(x);
        let m = match s {
            [m] => *m,
            [m, 1] => *m,
            _ => return Err(Error::shape("broadcast_cols", &[s, &[cols]])),
        };
        if cols == 0 {
            return Err(Error::shape("broadcast_cols", &[s, &[cols]]));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * cols);
        for &v in xv {
            out.extend(std::iter::repeat_n(v, cols));
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(Array::new(vec![m, cols], out)?, Op::BroadcastCols(x), tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    /// Reverse-mode sweep from a scalar root; fills gradients of every
    /// tracked node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].tracked {
                self.backprop_node(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !node.tracked {
                grads[id] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, k) => self.acc(grads, *x, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g * k)
            }),
            Op::AddScalar(x) | Op::Reshape(x) => self.acc(grads, *x, |d| add_into(d, g)),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = G B^T, dB = A^T G
                self.acc(grads, *a, |d| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            d[i * k + p] += dot(grow, brow);
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            let drow = &mut d[p * n..(p + 1) * n];
                            for j in 0..n {
                                drow[j] += a_ip * grow[j];
                            }
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, pad_left } => {
                let (c_in, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let ws = self.shape(*w);
                let (c_out, k) = (ws[0], ws[2]);
                let t_out = node.value.shape()[1];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let pad_left = *pad_left;
                if let Some(b) = b {
                    self.acc(grads, *b, |d| {
                        for o in 0..c_out {
                            d[o] += g[o * t_out..(o + 1) * t_out].iter().sum::<f64>();
                        }
                    });
                }
                self.acc(grads, *w, |d| {
                    for o in 0..c_out {
                        let grow = &g[o * t_out..(o + 1) * t_out];
                        for c in 0..c_in {
                            let xrow = &xv[c * t..(c + 1) * t];
                            for kk in 0..k {
                                let (lo, hi) = conv_range(kk, pad_left, t, t_out);
                                if lo >= hi {
                                    continue;
                                }
                                let xs = lo + kk - pad_left;
                                d[(o * c_in + c) * k + kk] +=
                                    dot(&grow[lo..hi], &xrow[xs..xs + (hi - lo)]);
                            }
                        }
                    }
                });
                self.acc(grads, *x, |d| {
                    for o in 0..c_out {
                        let grow = &g[o * t_out..(o + 1) * t_out];
                        for c in 0..c_in {
                            let drow = &mut d[c * t..(c + 1) * t];
                            for kk in 0..k {
                                let wk = wv[(o * c_in + c) * k + kk];
                                if wk == 0.0 {
                                    continue;
                                }
                                let (lo, hi) = conv_range(kk, pad_left, t, t_out);
                                if lo >= hi {
                                    continue;
                                }
                                let xs = lo + kk - pad_left;
                                for (dv, gv) in drow[xs..xs + (hi - lo)].iter_mut().zip(&grow[lo..hi])
                                {
                                    *dv += wk * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (_, cols) = (node.value.shape()[0], node.value.shape()[1]);
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.acc(grads, p, |d| add_into(d, &g[offset..offset + n]));
                        offset += n;
                    }
                } else {
                    let mut col0 = 0;
                    for &p in parts {
                        let (pr, pc) = (self.shape(p)[0], self.shape(p)[1]);
                        self.acc(grads, p, |d| {
                            for r in 0..pr {
                                add_into(
                                    &mut d[r * pc..(r + 1) * pc],
                                    &g[r * cols + col0..r * cols + col0 + pc],
                                );
                            }
                        });
                        col0 += pc;
                    }
                }
            }
            Op::Sigmoid(x) => self.acc(grads, *x, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * sigmoid(xv[i]);
                    }
                })
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * xv[i] * g[i];
                    }
                })
            }
            Op::Recip(x) => self.acc(grads, *x, |d| {
                for i in 0..d.len() {
                    d[i] -= g[i] * y[i] * y[i];
                }
            }),
            Op::Softmax { x, axis } => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                self.acc(grads, *x, |d| {
                    for_each_lane(r, c, *axis, |idx| {
                        let s: f64 = idx.clone().map(|i| g[i] * y[i]).sum();
                        for i in idx {
                            d[i] += y[i] * (g[i] - s);
                        }
                    });
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let (ch, t) = (node.value.shape()[0], node.value.shape()[1]);
                self.acc(grads, *x, |d| {
                    for col in 0..t {
                        let mut mg = 0.0;
                        let mut mgy = 0.0;
                        for c in 0..ch {
                            let i = c * t + col;
                            mg += g[i];
                            mgy += g[i] * y[i];
                        }
                        mg /= ch as f64;
                        mgy /= ch as f64;
                        for c in 0..ch {
                            let i = c * t + col;
                            d[i] += inv_std[col] * (g[i] - mg - y[i] * mgy);
                        }
                    }
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::SqErr(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * (av[i] - bv[i]) * g[i];
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] -= 2.0 * (av[i] - bv[i]) * g[i];
                    }
                });
            }
            Op::Bce { pred, target } => {
                let pv = self.value(*pred).data();
                self.acc(grads, *pred, |d| {
                    for i in 0..d.len() {
                        let p = pv[i];
                        if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                            continue;
                        }
                        let t = target[i];
                        d[i] += g[i] * (-t / p + (1.0 - t) / (1.0 - p));
                    }
                });
            }
            Op::L2NormChannels(x) => {
                let (ch, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                self.acc(grads, *x, |d| {
                    for col in 0..t {
                        if y[col] == 0.0 {
                            continue;
                        }
                        let k = g[col] / y[col];
                        for c in 0..ch {
                            d[c * t + col] += k * xv[c * t + col];
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.acc(grads, *x, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::BroadcastRows(x) => {
                let n = self.value(*x).len();
                self.acc(grads, *x, |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::BroadcastCols(x) => {
                let cols = node.value.shape()[1];
                self.acc(grads, *x, |d| {
                    for (dv, row) in d.iter_mut().zip(g.chunks(cols)) {
                        *dv += row.iter().sum::<f64>();
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[target.0];
        if !node.tracked {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }
}

/// Output column range `[lo, hi)` for which kernel tap `kk` reads a real
/// (non-padding) input column.
fn conv_range(kk: usize, pad_left: usize, t: usize, t_out: usize) -> (usize, usize) {
    let lo = pad_left.saturating_sub(kk);
    let hi = (t + pad_left).saturating_sub(kk).min(t_out);
    (lo, hi.max(lo))
}

fn for_each_lane(
    r: usize,
    c: usize,
    axis: usize,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    if axis == 1 {
        for i in 0..r {
            f((i * c..(i + 1) * c).step_by(1));
        }
    } else {
        for j in 0..c {
            f((j..r * c).step_by(c));
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += a_ip * brow[j];
            }
        }
    }
}
