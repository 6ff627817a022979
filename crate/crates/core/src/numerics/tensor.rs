//! Dense row-major f64 tensors and the forward kernels shared by the tape.

use crate::error::{Error, Result};

/// Additive logit for a disallowed attention position.
pub const MASKED: f64 = -1e9;

/// Mask entries at or below this value are treated as exactly zero probability.
pub(crate) const MASK_CUTOFF: f64 = -1e8;

pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements but {} values were given",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last dimension (1 for rank-0/1 scalars stored as `[1]`).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            self.shape[..self.shape.len().saturating_sub(1)]
                .iter()
                .product()
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = value;
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul(self, other)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn check_matmul(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "matmul of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok((a.shape[0], a.shape[1], b.shape[1]))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = check_matmul(a, b)?;
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `out += a[m×k] · b[k×n]`. Every output element accumulates over `p` in
/// order, so a row's result does not depend on which other rows are present.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    const R: usize = 4;
    let full = m / R * R;
    for i in (0..full).step_by(R) {
        let (o0, rest) = out[i * n..(i + R) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (
                a[i * k + p],
                a[(i + 1) * k + p],
                a[(i + 2) * k + p],
                a[(i + 3) * k + p],
            );
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = br[j];
                o0[j] += a0 * bv;
                o1[j] += a1 * bv;
                o2[j] += a2 * bv;
                o3[j] += a3 * bv;
            }
        }
    }
    for i in full..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let br = &b[p * n..(p + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

/// `out += aᵀ · g` where `a` is m×k and `g` is m×n (gradient w.r.t. a right operand).
pub(crate) fn matmul_at_b_into(
    a: &[f64],
    g: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let gr = &g[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o = &mut out[p * n..(p + 1) * n];
            for (ov, &gv) in o.iter_mut().zip(gr) {
                *ov += av * gv;
            }
        }
    }
}

/// `out += g · bᵀ` where `g` is m×n and `b` is k×n (gradient w.r.t. a left operand).
pub(crate) fn matmul_a_bt_into(
    g: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    // axpy over bᵀ vectorizes; a dot-product reduction would not
    let mut bt = vec![0.0; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    matmul_into(g, &bt, out, m, n, k);
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(silu_scalar)
}

/// Per-row normalization over the last dimension, scaled by `gain`, no bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor) -> Result<Tensor> {
    let d = x.cols();
    if gain.len() != d || d == 0 {
        return Err(Error::Dimension(format!(
            "layer_norm input {:?} with gain {:?}",
            x.shape, gain.shape
        )));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = &mut out.data[r * d..(r + 1) * d];
        let (mean, rstd) = row_stats(row);
        for (v, g) in row.iter_mut().zip(&gain.data) {
            *v = (*v - mean) * rstd * g;
        }
    }
    Ok(out)
}

pub(crate) fn row_stats(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

/// Row-wise softmax of `scores + mask`. Entries masked with [`MASKED`] get
/// probability exactly zero.
pub fn masked_softmax(scores: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if scores.shape != mask.shape {
        return Err(Error::Dimension(format!(
            "softmax scores {:?} with mask {:?}",
            scores.shape, mask.shape
        )));
    }
    let c = scores.cols();
    let mut out = vec![0.0; scores.len()];
    for r in 0..scores.rows() {
        softmax_row(
            &scores.data[r * c..(r + 1) * c],
            &mask.data[r * c..(r + 1) * c],
            &mut out[r * c..(r + 1) * c],
        )
        .map_err(|_| Error::Contract(format!("softmax row {r} has every position masked")))?;
    }
    Ok(Tensor {
        shape: scores.shape.clone(),
        data: out,
    })
}

pub(crate) fn softmax_row(
    logits: &[f64],
    mask: &[f64],
    out: &mut [f64],
) -> std::result::Result<(), ()> {
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for (&l, &m) in logits.iter().zip(mask) {
        if m > MASK_CUTOFF {
            any = true;
            // NaN must survive so the caller can report where it came from
            max = if l.is_nan() || max.is_nan() {
                f64::NAN
            } else {
                max.max(l + m)
            };
        }
    }
    if !any {
        return Err(());
    }
    let mut sum = 0.0;
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m > MASK_CUTOFF {
            (l + m - max).exp()
        } else {
            0.0
        };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::matrix(2, 2, vec![0.3, -1.0, 2.5, 7.0]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(
            msg.contains("[2, 3]") && msg.matches("[2, 3]").count() == 2,
            "{msg}"
        );
    }

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::matrix(1, 4, vec![3.0; 4]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[4], 1.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0)).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!((y.data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean() {
        let data: Vec<f64> = (0..24)
            .map(|i| ((i * 7919) % 13) as f64 * 0.37 - 2.0)
            .collect();
        let x = Tensor::matrix(3, 8, data).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[8], 1.0)).unwrap();
        for r in 0..3 {
            let mean: f64 = y.row(r).iter().sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn silu_at_zero() {
        assert_eq!(silu_scalar(0.0), 0.0);
    }

    #[test]
    fn masked_softmax_two_of_four() {
        let s = Tensor::matrix(1, 4, vec![0.5, 1.0, -2.0, 3.0]).unwrap();
        let m = Tensor::matrix(1, 4, vec![0.0, MASKED, 0.0, MASKED]).unwrap();
        let p = masked_softmax(&s, &m).unwrap();
        assert_eq!(p.data()[1], 0.0);
        assert_eq!(p.data()[3], 0.0);
        assert!((p.data()[0] + p.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_all_masked_is_contract_error() {
        let s = Tensor::matrix(1, 2, vec![0.5, 1.0]).unwrap();
        let m = Tensor::matrix(1, 2, vec![MASKED, MASKED]).unwrap();
        assert!(matches!(masked_softmax(&s, &m), Err(Error::Contract(_))));
    }
}
