//! Reverse-mode gradient tape over a closed set of dense kernels.
//!
//! A [`Tape`] records every kernel application of one forward pass together
//! with whatever the kernel needs for its backward pass. Gradients flow back
//! from a scalar loss (or any node with an explicit upstream gradient) and
//! can then be accumulated into the [`ParamStore`] the parameters came from.

use super::matrix::gemm;
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seg: usize,
        probs: Vec<f64>,
    },
    GruGate {
        gx: Var,
        gh: Var,
        h: Var,
        mask: Vec<bool>,
        r: Matrix,
        z: Matrix,
        n: Matrix,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    RowSum(Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        mask: Vec<bool>,
        weights: Vec<f64>,
        scale: f64,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

fn check(cond: bool, kernel: &str, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::shape(kernel, msg()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over `xs`, restricted to entries where `valid` is true.
/// Masked entries get probability 0. Returns `None` when nothing is valid.
pub(crate) fn masked_softmax(xs: &[f64], valid: impl Fn(usize) -> bool) -> Option<Vec<f64>> {
    let max = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| valid(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut out: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, &v)| if valid(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Some(out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check(av.cols() == bv.rows(), "matmul", || {
            format!("{:?} times {:?}", av.shape(), bv.shape())
        })?;
        let out = av.matmul(bv)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + bias`, with the 1×n `bias` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        check(bv.rows() == 1 && bv.cols() == xv.cols(), "add_row", || {
            format!("bias {:?} for input {:?}", bv.shape(), xv.shape())
        })?;
        let mut out = xv.clone();
        let b = bv.as_slice();
        for i in 0..out.rows() {
            for (o, bj) in out.row_mut(i).iter_mut().zip(b) {
                *o += bj;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    /// Dense layer `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check(av.shape() == bv.shape(), "add", || {
            format!("{:?} vs {:?}", av.shape(), bv.shape())
        })?;
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check(av.shape() == bv.shape(), "mul", || {
            format!("{:?} vs {:?}", av.shape(), bv.shape())
        })?;
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Row-wise softmax. Entries whose `mask` is false get probability zero.
    pub fn softmax(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = &mask {
            check(m.len() == xv.len(), "softmax", || {
                format!("mask of {} for {:?}", m.len(), xv.shape())
            })?;
        }
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        let cols = xv.cols();
        for i in 0..xv.rows() {
            let probs = masked_softmax(xv.row(i), |j| {
                mask.as_ref().is_none_or(|m| m[i * cols + j])
            })
            .ok_or_else(|| Error::EmptyList(format!("softmax row {i} is fully masked")))?;
            out.row_mut(i).copy_from_slice(&probs);
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Row-wise layer normalization with learned 1×n `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.cols();
        check(
            gv.shape() == (1, n) && bv.shape() == (1, n),
            "layer_norm",
            || format!("gamma {:?}, beta {:?} for {:?}", gv.shape(), bv.shape(), xv.shape()),
        )?;
        let mut xhat = Matrix::zeros(xv.rows(), n);
        let mut out = Matrix::zeros(xv.rows(), n);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[(i, j)] = h;
                out[(i, j)] = gv.as_slice()[j] * h + bv.as_slice()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Scaled dot-product multi-head attention applied independently to each
    /// block of `seg` consecutive rows. Keys whose `key_mask` entry is false
    /// receive zero attention weight. No positional information is used.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seg: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qv.shape();
        check(
            kv.shape() == (rows, width) && vv.shape() == (rows, width),
            "attention",
            || format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()),
        )?;
        check(
            heads > 0 && width % heads == 0,
            "attention",
            || format!("width {width} not divisible into {heads} heads"),
        )?;
        check(seg > 0 && rows % seg == 0, "attention", || {
            format!("{rows} rows not divisible into segments of {seg}")
        })?;
        check(key_mask.len() == rows, "attention", || {
            format!("key mask of {} for {rows} rows", key_mask.len())
        })?;
        let dh = width / heads;
        let norm = 1.0 / (dh as f64).sqrt();
        let n_seg = rows / seg;
        let mut probs = vec![0.0; n_seg * heads * seg * seg];
        let mut out = Matrix::zeros(rows, width);
        let mut scores = vec![0.0; seg];
        for b in 0..n_seg {
            let base = b * seg;
            for hh in 0..heads {
                let c0 = hh * dh;
                for i in 0..seg {
                    let qi = &qv.row(base + i)[c0..c0 + dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &kv.row(base + j)[c0..c0 + dh];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * norm;
                    }
                    let p = masked_softmax(&scores, |j| key_mask[base + j]).ok_or_else(|| {
                        Error::EmptyList(format!("attention segment {b} has no valid keys"))
                    })?;
                    let off = ((b * heads + hh) * seg + i) * seg;
                    probs[off..off + seg].copy_from_slice(&p);
                    let orow = &mut out.row_mut(base + i)[c0..c0 + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let vj = &vv.row(base + j)[c0..c0 + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seg,
                probs,
            },
        ))
    }

    /// One gated recurrent update. `gx = x·Wx + bx` and `gh = h·Wh + bh` hold the
    /// reset, update and candidate pre-activations side by side (`[r | z | n]`).
    ///
    /// ```text
    /// r  = σ(gx_r + gh_r)
    /// z  = σ(gx_z + gh_z)
    /// n  = tanh(gx_n + r ⊙ gh_n)
    /// h' = (1 − z) ⊙ n + z ⊙ h
    /// ```
    ///
    /// Rows whose `mask` entry is false pass `h` through unchanged.
    pub fn gru_gate(&mut self, gx: Var, gh: Var, h: Var, mask: Vec<bool>) -> Result<Var> {
        let (gxv, ghv, hv) = (self.value(gx), self.value(gh), self.value(h));
        let (rows, d) = hv.shape();
        check(
            gxv.shape() == (rows, 3 * d) && ghv.shape() == (rows, 3 * d) && mask.len() == rows,
            "gru_gate",
            || {
                format!(
                    "gx {:?}, gh {:?}, h {:?}, mask {}",
                    gxv.shape(),
                    ghv.shape(),
                    hv.shape(),
                    mask.len()
                )
            },
        )?;
        let mut r = Matrix::zeros(rows, d);
        let mut z = Matrix::zeros(rows, d);
        let mut n = Matrix::zeros(rows, d);
        let mut out = hv.clone();
        for i in 0..rows {
            let (gxr, ghr, hr) = (gxv.row(i), ghv.row(i), hv.row(i));
            for j in 0..d {
                let rj = sigmoid(gxr[j] + ghr[j]);
                let zj = sigmoid(gxr[d + j] + ghr[d + j]);
                let nj = (gxr[2 * d + j] + rj * ghr[2 * d + j]).tanh();
                r[(i, j)] = rj;
                z[(i, j)] = zj;
                n[(i, j)] = nj;
                if mask[i] {
                    out[(i, j)] = (1.0 - zj) * nj + zj * hr[j];
                }
            }
        }
        Ok(self.push(
            out,
            Op::GruGate {
                gx,
                gh,
                h,
                mask,
                r,
                z,
                n,
            },
        ))
    }

    /// Row gather: output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        check(index.iter().all(|&i| i < xv.rows()), "gather_rows", || {
            format!("index out of range for {} rows", xv.rows())
        })?;
        let cols = xv.cols();
        let mut out = Matrix::zeros(index.len(), cols);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        Ok(self.push(out, Op::Gather { x, index }))
    }

    /// Stacks inputs vertically.
    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        check(
            parts.iter().all(|&p| self.value(p).cols() == cols),
            "concat_rows",
            || "column counts differ".to_string(),
        )?;
        let mut data = Vec::new();
        for &p in &parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts)))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self
            .value(x)
            .clone()
            .reshaped(rows, cols)
            .map_err(|e| Error::shape("reshape", e.to_string()))?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Sum of each row, as a column vector.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|i| xv.row(i).iter().sum()).collect();
        let out = Matrix::from_vec(xv.rows(), 1, data).expect("row_sum shape");
        self.push(out, Op::RowSum(x))
    }

    /// Sum of all entries, as a 1×1 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Weighted listwise softmax cross-entropy, one list per row:
    /// `scale · Σ_rows −Σ_i w_i · log softmax(row)_i`. Weights are constants.
    pub fn softmax_xent(
        &mut self,
        logits: Var,
        mask: Vec<bool>,
        weights: Vec<f64>,
        scale: f64,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        check(
            mask.len() == rows * cols && weights.len() == rows * cols,
            "softmax_xent",
            || {
                format!(
                    "mask {} and weights {} for {:?}",
                    mask.len(),
                    weights.len(),
                    lv.shape()
                )
            },
        )?;
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for i in 0..rows {
            let p = masked_softmax(lv.row(i), |j| mask[i * cols + j])
                .ok_or_else(|| Error::EmptyList(format!("list {i} is fully masked")))?;
            for j in 0..cols {
                let idx = i * cols + j;
                if mask[idx] && weights[idx] != 0.0 {
                    loss -= weights[idx] * p[j].ln();
                }
            }
            probs[i * cols..(i + 1) * cols].copy_from_slice(&p);
        }
        Ok(self.push(
            Matrix::scalar(scale * loss),
            Op::SoftmaxXent {
                logits,
                mask,
                weights,
                scale,
                probs,
            },
        ))
    }

    /// Backpropagates from a 1×1 loss node with unit upstream gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a node that was never computed by forward".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with(loss, Matrix::scalar(1.0))
    }

    /// Backpropagates `upstream` (same shape as `out`) through the tape.
    pub fn backward_with(&mut self, out: Var, upstream: Matrix) -> Result<()> {
        if out.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a node that was never computed by forward".into(),
            ));
        }
        if upstream.shape() != self.value(out).shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "upstream {:?} for output {:?}",
                    upstream.shape(),
                    self.value(out).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(upstream);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of every parameter node into `store`'s buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.grad_mut(*id).add_assign(g);
            }
        }
    }

    fn backprop_node(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                gemm(false, g, true, bv, 0.0, &mut da);
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                gemm(true, av, false, g, 0.0, &mut db);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::AddRow(x, b) => {
                let mut db = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, g.clone());
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = zip_map(g, bv, |x, y| x * y);
                let db = zip_map(g, av, |x, y| x * y);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(x, f) => accumulate(grads, *x, g.map(|v| v * f)),
            Op::Relu(x) => {
                let dx = zip_map(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = zip_map(g, &node.value, |gv, y| gv * (1.0 - y * y));
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = zip_map(g, &node.value, |gv, y| gv * y * (1.0 - y));
                accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let mut dx = Matrix::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let dot: f64 = g.row(i).iter().zip(p.row(i)).map(|(a, b)| a * b).sum();
                    for j in 0..p.cols() {
                        dx[(i, j)] = p[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma).as_slice();
                let (rows, n) = xhat.shape();
                let mut dgamma = Matrix::zeros(1, n);
                let mut dbeta = Matrix::zeros(1, n);
                let mut dx = Matrix::zeros(rows, n);
                let mut dxhat = vec![0.0; n];
                for i in 0..rows {
                    let (gr, hr) = (g.row(i), xhat.row(i));
                    for j in 0..n {
                        dgamma.as_mut_slice()[j] += gr[j] * hr[j];
                        dbeta.as_mut_slice()[j] += gr[j];
                        dxhat[j] = gr[j] * gam[j];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
                    let k = inv_std[i] / n as f64;
                    for j in 0..n {
                        dx[(i, j)] = k * (n as f64 * dxhat[j] - s1 - hr[j] * s2);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *beta, dbeta);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seg,
                probs,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (rows, width) = qv.shape();
                let (heads, seg) = (*heads, *seg);
                let dh = width / heads;
                let norm = 1.0 / (dh as f64).sqrt();
                let mut dq = Matrix::zeros(rows, width);
                let mut dk = Matrix::zeros(rows, width);
                let mut dv = Matrix::zeros(rows, width);
                let mut dp = vec![0.0; seg];
                for b in 0..rows / seg {
                    let base = b * seg;
                    for hh in 0..heads {
                        let c0 = hh * dh;
                        for i in 0..seg {
                            let off = ((b * heads + hh) * seg + i) * seg;
                            let p = &probs[off..off + seg];
                            let gi = &g.row(base + i)[c0..c0 + dh];
                            for j in 0..seg {
                                let vj = &vv.row(base + j)[c0..c0 + dh];
                                dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                                if p[j] != 0.0 {
                                    let dvj = &mut dv.row_mut(base + j)[c0..c0 + dh];
                                    for (d, x) in dvj.iter_mut().zip(gi) {
                                        *d += p[j] * x;
                                    }
                                }
                            }
                            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..seg {
                                let ds = p[j] * (dp[j] - dot) * norm;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in c0..c0 + dh {
                                    dq[(base + i, c)] += ds * kv[(base + j, c)];
                                    dk[(base + j, c)] += ds * qv[(base + i, c)];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::GruGate {
                gx,
                gh,
                h,
                mask,
                r,
                z,
                n,
            } => {
                let (ghv, hv) = (val(*gh), val(*h));
                let (rows, d) = hv.shape();
                let mut dgx = Matrix::zeros(rows, 3 * d);
                let mut dgh = Matrix::zeros(rows, 3 * d);
                let mut dh = Matrix::zeros(rows, d);
                for i in 0..rows {
                    if !mask[i] {
                        dh.row_mut(i).copy_from_slice(g.row(i));
                        continue;
                    }
                    for j in 0..d {
                        let go = g[(i, j)];
                        let (rj, zj, nj) = (r[(i, j)], z[(i, j)], n[(i, j)]);
                        dh[(i, j)] = go * zj;
                        let dan = go * (1.0 - zj) * (1.0 - nj * nj);
                        let daz = go * (hv[(i, j)] - nj) * zj * (1.0 - zj);
                        let dar = dan * ghv[(i, 2 * d + j)] * rj * (1.0 - rj);
                        dgx[(i, j)] = dar;
                        dgh[(i, j)] = dar;
                        dgx[(i, d + j)] = daz;
                        dgh[(i, d + j)] = daz;
                        dgx[(i, 2 * d + j)] = dan;
                        dgh[(i, 2 * d + j)] = dan * rj;
                    }
                }
                accumulate(grads, *gx, dgx);
                accumulate(grads, *gh, dgh);
                accumulate(grads, *h, dh);
            }
            Op::Gather { x, index } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    let slice = g.as_slice()[start * c..(start + r) * c].to_vec();
                    accumulate(grads, p, Matrix::from_vec(r, c, slice).expect("concat grad"));
                    start += r;
                }
            }
            Op::Reshape(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, g.clone().reshaped(r, c).expect("reshape grad"));
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    dx.row_mut(i).fill(g[(i, 0)]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::SoftmaxXent {
                logits,
                mask,
                weights,
                scale,
                probs,
            } => {
                let (rows, cols) = val(*logits).shape();
                let up = g[(0, 0)] * scale;
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let total: f64 = (0..cols)
                        .filter(|&j| mask[i * cols + j])
                        .map(|j| weights[i * cols + j])
                        .sum();
                    for j in 0..cols {
                        let idx = i * cols + j;
                        if mask[idx] {
                            dx[(i, j)] = up * (probs[idx] * total - weights[idx]);
                        }
                    }
                }
                accumulate(grads, *logits, dx);
            }
        }
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("zip_map shape")
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_zero_bias_is_identity() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![1.0, -2.0, 3.5]]).unwrap());
        let w = t.constant(Matrix::identity(3));
        let b = t.constant(Matrix::zeros(1, 3));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 4));
        let p = t.softmax(x, None).unwrap();
        assert!(t.value(p).as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![1.0, 5.0, 1.0]]).unwrap());
        let p = t.softmax(x, Some(vec![true, false, true])).unwrap();
        assert_eq!(t.value(p).as_slice(), &[0.5, 0.0, 0.5]);
        let all_masked = t.softmax(x, Some(vec![false; 3]));
        assert!(matches!(all_masked, Err(Error::EmptyList(_))));
    }

    #[test]
    fn gru_step_with_zero_weights_and_state_stays_zero() {
        let mut t = Tape::new();
        let gx = t.constant(Matrix::zeros(2, 9));
        let gh = t.constant(Matrix::zeros(2, 9));
        let h = t.constant(Matrix::zeros(2, 3));
        let h1 = t.gru_gate(gx, gh, h, vec![true, true]).unwrap();
        assert!(t.value(h1).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_xent_gradient_is_prob_minus_onehot() {
        let mut t = Tape::new();
        let logits = t.constant(Matrix::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap());
        let loss = t
            .softmax_xent(logits, vec![true; 3], vec![0.0, 1.0, 0.0], 1.0)
            .unwrap();
        t.backward(loss).unwrap();
        let p = masked_softmax(&[0.3, -1.2, 2.0], |_| true).unwrap();
        let g = t.grad(logits).unwrap();
        for j in 0..3 {
            let onehot = if j == 1 { 1.0 } else { 0.0 };
            assert!((g[(0, j)] - (p[j] - onehot)).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_on_foreign_or_non_scalar_node_is_usage_error() {
        let mut other = Tape::new();
        let x = other.constant(Matrix::zeros(2, 2));
        let mut fresh = Tape::new();
        assert!(matches!(fresh.backward(x), Err(Error::Usage(_))));
        assert!(matches!(other.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::filled(2, 2, 1.0));
        let mut t = Tape::new();
        let _wv = t.param(&store, w);
        let c = t.constant(Matrix::scalar(3.0));
        let loss = t.sum(c);
        t.backward(loss).unwrap();
        t.accumulate_param_grads(&mut store);
        assert_eq!(store.grad(w).max_abs(), 0.0);
    }

    #[test]
    fn kernel_errors_name_the_kernel() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        match t.matmul(a, b) {
            Err(Error::Shape { context, .. }) => assert_eq!(context, "matmul"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
