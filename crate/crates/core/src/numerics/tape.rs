//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! A [`Tape`] borrows a [`ParamStore`] read-only; parameter leaves are copied
//! in on first use and their gradients come back from [`Tape::backward`] as a
//! [`Grads`] map, which the caller accumulates into the store. This keeps the
//! store single-writer while forward passes stay independent.

use super::params::{ParamId, ParamStore};
use super::tensor::{
    self, matmul_a_bt_into, matmul_at_b_into, row_stats, sigmoid, softmax_row, Tensor, MASK_CUTOFF,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Affine {
        x: Var,
        scale: f64,
    },
    Silu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Merge {
        base: Var,
        parts: Vec<(Var, Vec<usize>)>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RepeatRows(Var),
    MeanRows(Var),
    SquaredError {
        pred: Var,
        residual: Vec<f64>,
        denom: f64,
    },
    CrossEntropy {
        logits: Var,
        rows: Vec<(usize, usize)>,
        probs: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Smoothness(Var),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Affine { .. } => "affine",
            Op::Silu(_) => "silu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::GatherRows { .. } => "gather_rows",
            Op::Merge { .. } => "merge",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::RepeatRows(_) => "repeat_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::SquaredError { .. } => "squared_error",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::WeightedSum(_) => "weighted_sum",
            Op::Smoothness(_) => "smoothness",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar w.r.t. the parameters that reached it.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    entries: Vec<(ParamId, Tensor)>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().map(|(p, t)| (*p, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(512),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// Name of the earliest node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| match n.op {
                Op::Param(id) => format!("param {}", self.store.name(id)),
                ref op => format!("{} (node {i})", op.kind()),
            })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// `offset + scale * x` with a constant offset.
    pub fn affine(&mut self, x: Var, scale: f64, offset: &Tensor) -> Result<Var> {
        let out = offset.zip_map(self.value(x), |o, v| o + scale * v)?;
        Ok(self.push(out, Op::Affine { x, scale }))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = tensor::silu(self.value(a));
        self.push(out, Op::Silu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let xv = self.value(x);
        let g = self.value(gain);
        let d = xv.cols();
        if g.len() != d || d == 0 {
            return Err(Error::Dimension(format!(
                "layer_norm input {:?} with gain {:?}",
                xv.shape(),
                g.shape()
            )));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = xv.row(r);
            let (mean, rs) = row_stats(row);
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g.data()[c];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                rstd,
            },
        ))
    }

    /// Multi-head scaled dot-product attention with an additive mask.
    ///
    /// `q`, `k`, `v` are N×d; heads split the columns evenly and are
    /// concatenated back in order. Masked positions get probability exactly 0,
    /// so rows never read values they are not allowed to see.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &Tensor,
        heads: usize,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let n = qv.rows();
        let d = qv.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() || mask.shape() != [n, n] {
            return Err(Error::Dimension(format!(
                "attention q {:?}, k {:?}, v {:?}, mask {:?}",
                qv.shape(),
                kv.shape(),
                vv.shape(),
                mask.shape()
            )));
        }
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        let mut logits = vec![0.0; n];
        let (qd, kd, vd, md) = (qv.data(), kv.data(), vv.data(), mask.data());
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let qi = &qd[i * d + off..i * d + off + hd];
                let mrow = &md[i * n..(i + 1) * n];
                for j in 0..n {
                    logits[j] = if mrow[j] > MASK_CUTOFF {
                        let kj = &kd[j * d + off..j * d + off + hd];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    } else {
                        0.0
                    };
                }
                let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                softmax_row(&logits, mrow, p).map_err(|_| {
                    Error::Contract(format!("attention row {i} has every position masked"))
                })?;
                let o = &mut out[i * d + off..i * d + off + hd];
                for j in 0..n {
                    let pj = p[j];
                    if pj == 0.0 {
                        continue;
                    }
                    let vj = &vd[j * d + off..j * d + off + hd];
                    for (oc, &vc) in o.iter_mut().zip(vj) {
                        *oc += pj * vc;
                    }
                }
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(Error::Internal(format!(
                    "row index {i} out of bounds for {rows} rows"
                )));
            }
            out.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// `out[i] = base[i] + part[rank of i in idx]` for each (part, idx).
    pub fn merge(&mut self, base: Var, parts: &[(Var, &[usize])]) -> Result<Var> {
        let mut out = self.value(base).clone();
        let rows = out.rows();
        let c = out.cols();
        for (part, idx) in parts {
            let pv = self.value(*part);
            if pv.rows() != idx.len() || (pv.cols() != c && !idx.is_empty()) {
                return Err(Error::Internal(format!(
                    "merge part {:?} does not match {} indices of width {c}",
                    pv.shape(),
                    idx.len()
                )));
            }
            for (r, &i) in idx.iter().enumerate() {
                if i >= rows {
                    return Err(Error::Internal(format!("merge index {i} out of bounds")));
                }
                let src = pv.row(r);
                for (o, s) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        let parts = parts.iter().map(|(v, i)| (*v, i.to_vec())).collect();
        Ok(self.push(out, Op::Merge { base, parts }))
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let c = vars
            .iter()
            .map(|v| self.value(*v))
            .find(|t| t.rows() > 0)
            .map_or(0, Tensor::cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for v in vars {
            let t = self.value(*v);
            if t.rows() == 0 {
                continue;
            }
            if t.cols() != c {
                return Err(Error::Dimension(format!(
                    "concat_rows of width {c} with {:?}",
                    t.shape()
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(vars.to_vec())))
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var> {
        let rows = vars.first().map_or(0, |v| self.value(*v).rows());
        if vars.iter().any(|v| self.value(*v).rows() != rows) {
            return Err(Error::Dimension(
                "concat_cols of differing row counts".into(),
            ));
        }
        let total: usize = vars.iter().map(|v| self.value(*v).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in vars {
                data.extend_from_slice(self.value(*v).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(out, Op::ConcatCols(vars.to_vec())))
    }

    /// Tile a 1×c row into n×c.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(Error::Dimension(format!(
                "repeat_rows expects one row, got {:?}",
                xv.shape()
            )));
        }
        let data = xv.data().repeat(n);
        let out = Tensor::matrix(n, xv.cols(), data)?;
        Ok(self.push(out, Op::RepeatRows(x)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        if rows == 0 {
            return Err(Error::Input("mean over zero rows".into()));
        }
        let mut out = vec![0.0; c];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let out = Tensor::matrix(1, c, out)?;
        Ok(self.push(out, Op::MeanRows(x)))
    }

    /// `Σ (pred − target)² / denom` as a scalar.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor, denom: f64) -> Result<Var> {
        let residual = self.value(pred).zip_map(target, |p, t| p - t)?.into_data();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / denom;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SquaredError {
                pred,
                residual,
                denom,
            },
        ))
    }

    /// Mean negative log-likelihood of `class` at each `(row, class)` pair.
    pub fn cross_entropy(&mut self, logits: Var, rows: &[(usize, usize)]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Contract(
                "cross entropy over an empty target set".into(),
            ));
        }
        let lv = self.value(logits);
        let (n, v) = (lv.rows(), lv.cols());
        let mut probs = vec![0.0; rows.len() * v];
        let mut loss = 0.0;
        let zero_mask = vec![0.0; v];
        for (k, &(r, class)) in rows.iter().enumerate() {
            if r >= n || class >= v {
                return Err(Error::Internal(format!(
                    "target ({r}, {class}) outside logits {n}×{v}"
                )));
            }
            let p = &mut probs[k * v..(k + 1) * v];
            softmax_row(lv.row(r), &zero_mask, p)
                .map_err(|_| Error::Internal("empty logits row".into()))?;
            // log-sum-exp form keeps tiny probabilities exact
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[class];
        }
        loss /= rows.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                rows: rows.to_vec(),
                probs,
            },
        ))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for (v, w) in terms {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(Error::Dimension(format!(
                    "weighted_sum term of shape {:?}",
                    t.shape()
                )));
            }
            total += w * t.item();
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Mean squared second difference over consecutive rows.
    pub fn smoothness(&mut self, x: Var) -> Result<Var> {
        let loss = second_difference_loss(self.value(x))?;
        Ok(self.push(Tensor::scalar(loss), Op::Smoothness(x)))
    }

    /// Gradients of scalar `loss` w.r.t. every parameter leaf it depends on.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Grads::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.entries
                        .push((*id, Tensor::new(node.value.shape().to_vec(), g)?));
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    matmul_a_bt_into(&g, bv.data(), acc(&mut grads, self, *a), m, k, n);
                    matmul_at_b_into(av.data(), &g, acc(&mut grads, self, *b), m, k, n);
                }
                Op::Add(a, b) => {
                    axpy(acc(&mut grads, self, *a), &g, 1.0);
                    axpy(acc(&mut grads, self, *b), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(acc(&mut grads, self, *a), &g, 1.0);
                    axpy(acc(&mut grads, self, *b), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let bv = self.value(*b).data();
                    for ((o, gi), bi) in acc(&mut grads, self, *a).iter_mut().zip(&g).zip(bv) {
                        *o += gi * bi;
                    }
                    let av = self.value(*a).data();
                    for ((o, gi), ai) in acc(&mut grads, self, *b).iter_mut().zip(&g).zip(av) {
                        *o += gi * ai;
                    }
                }
                Op::Scale(a, s) => axpy(acc(&mut grads, self, *a), &g, *s),
                Op::Affine { x, scale } => axpy(acc(&mut grads, self, *x), &g, *scale),
                Op::Silu(a) => {
                    let xv = self.value(*a).data();
                    for ((o, gi), &x) in acc(&mut grads, self, *a).iter_mut().zip(&g).zip(xv) {
                        let s = sigmoid(x);
                        *o += gi * s * (1.0 + x * (1.0 - s));
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let d = gv.len();
                    let rows = rstd.len();
                    {
                        let gg = acc(&mut grads, self, *gain);
                        for r in 0..rows {
                            for c in 0..d {
                                gg[c] += g[r * d + c] * xhat[r * d + c];
                            }
                        }
                    }
                    let gx = acc(&mut grads, self, *x);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..d {
                            dxhat[c] = g[r * d + c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xhat[r * d + c];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for c in 0..d {
                            gx[r * d + c] +=
                                rstd[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    self.attention_backward(&mut grads, &g, *q, *k, *v, *heads, probs);
                }
                Op::GatherRows { x, idx } => {
                    let c = self.value(*x).cols();
                    let gx = acc(&mut grads, self, *x);
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut gx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c], 1.0);
                    }
                }
                Op::Merge { base, parts } => {
                    axpy(acc(&mut grads, self, *base), &g, 1.0);
                    let c = node.value.cols();
                    for (part, idx) in parts {
                        let gp = acc(&mut grads, self, *part);
                        for (r, &i) in idx.iter().enumerate() {
                            axpy(&mut gp[r * c..(r + 1) * c], &g[i * c..(i + 1) * c], 1.0);
                        }
                    }
                }
                Op::ConcatRows(vars) => {
                    let mut off = 0;
                    for v in vars {
                        let len = self.value(*v).len();
                        if len == 0 {
                            continue;
                        }
                        axpy(acc(&mut grads, self, *v), &g[off..off + len], 1.0);
                        off += len;
                    }
                }
                Op::ConcatCols(vars) => {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut col = 0;
                    for v in vars {
                        let c = self.value(*v).cols();
                        let gv = acc(&mut grads, self, *v);
                        for r in 0..rows {
                            axpy(
                                &mut gv[r * c..(r + 1) * c],
                                &g[r * total + col..r * total + col + c],
                                1.0,
                            );
                        }
                        col += c;
                    }
                }
                Op::RepeatRows(x) => {
                    let c = self.value(*x).cols();
                    let gx = acc(&mut grads, self, *x);
                    for chunk in g.chunks(c.max(1)) {
                        axpy(gx, chunk, 1.0);
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let (rows, c) = (xv.rows(), xv.cols());
                    let gx = acc(&mut grads, self, *x);
                    for r in 0..rows {
                        axpy(&mut gx[r * c..(r + 1) * c], &g, 1.0 / rows as f64);
                    }
                }
                Op::SquaredError {
                    pred,
                    residual,
                    denom,
                } => {
                    axpy(acc(&mut grads, self, *pred), residual, 2.0 * g[0] / denom);
                }
                Op::CrossEntropy {
                    logits,
                    rows,
                    probs,
                } => {
                    let v = self.value(*logits).cols();
                    let scale = g[0] / rows.len() as f64;
                    let gl = acc(&mut grads, self, *logits);
                    for (k, &(r, class)) in rows.iter().enumerate() {
                        let p = &probs[k * v..(k + 1) * v];
                        let dst = &mut gl[r * v..(r + 1) * v];
                        for (o, pi) in dst.iter_mut().zip(p) {
                            *o += scale * pi;
                        }
                        dst[class] -= scale;
                    }
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        acc(&mut grads, self, *v)[0] += w * g[0];
                    }
                }
                Op::Smoothness(x) => {
                    let xv = self.value(*x);
                    let (n, c) = (xv.rows(), xv.cols());
                    let d = xv.data();
                    let s = 2.0 * g[0] / (n - 2) as f64;
                    let gx = acc(&mut grads, self, *x);
                    for k in 1..n - 1 {
                        for j in 0..c {
                            let r = d[(k + 1) * c + j] - 2.0 * d[k * c + j] + d[(k - 1) * c + j];
                            gx[(k + 1) * c + j] += s * r;
                            gx[k * c + j] -= 2.0 * s * r;
                            gx[(k - 1) * c + j] += s * r;
                        }
                    }
                }
            }
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dvv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
                let gi = &g[i * d + off..i * d + off + hd];
                let mut s = 0.0;
                for j in 0..n {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &vd[j * d + off..j * d + off + hd];
                    dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    s += p[j] * dp[j];
                    let dvj = &mut dvv[j * d + off..j * d + off + hd];
                    for (o, &gc) in dvj.iter_mut().zip(gi) {
                        *o += p[j] * gc;
                    }
                }
                for j in 0..n {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - s) * scale;
                    for c in 0..hd {
                        dq[i * d + off + c] += ds * kd[j * d + off + c];
                        dk[j * d + off + c] += ds * qd[i * d + off + c];
                    }
                }
            }
        }
        axpy(acc(grads, self, q), &dq, 1.0);
        axpy(acc(grads, self, k), &dk, 1.0);
        axpy(acc(grads, self, v), &dvv, 1.0);
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], tape: &Tape<'_>, v: Var) -> &'g mut [f64] {
    let len = tape.nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// `(1/(n−2)) Σ_{k=1}^{n−2} ‖x_{k+1} − 2x_k + x_{k−1}‖²` over rows of `x`.
pub fn second_difference_loss(x: &Tensor) -> Result<f64> {
    let (n, c) = (x.rows(), x.cols());
    if n < 3 {
        return Err(Error::Input(format!(
            "second difference needs ≥3 rows, got {n}"
        )));
    }
    let d = x.data();
    let mut total = 0.0;
    for k in 1..n - 1 {
        for j in 0..c {
            let r = d[(k + 1) * c + j] - 2.0 * d[k * c + j] + d[(k - 1) * c + j];
            total += r * r;
        }
    }
    Ok(total / (n - 2) as f64)
}
