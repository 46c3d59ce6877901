//! Forward-only reference kernels for average attention and talking-heads
//! attention, plus plain scaled dot-product attention they reduce to.
//!
//! Everything is dense `f64`, row-major, and sized for tests and demos
//! rather than throughput.

pub mod reference;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("{0} contains a non-finite entry")]
    NonFinite(&'static str),
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

fn shape_err(
    what: &'static str,
    expected: impl fmt::Display,
    got: impl fmt::Display,
) -> KernelError {
    KernelError::Shape {
        what,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// Dense row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(shape_err("matrix data", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(KernelError::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(shape_err("row length", c, bad.len()));
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, KernelError> {
        if self.cols != other.rows {
            return Err(shape_err("matmul inner dimension", self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for (k, &a) in self.row(i).iter().enumerate() {
                let b = other.row(k);
                let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o.iter_mut().zip(b) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(mut self, factor: f64) -> Matrix {
        self.data.iter_mut().for_each(|x| *x *= factor);
        self
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Bypass; used to make the FFN an exact identity in tests.
    Identity,
}

/// Position-wise feed-forward network `act(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnParams {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    activation: Activation,
}

impl FfnParams {
    pub fn new(
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, KernelError> {
        let (d, d_ff) = w1.shape();
        if b1.len() != d_ff {
            return Err(shape_err("b1 length", d_ff, b1.len()));
        }
        if w2.shape() != (d_ff, d) {
            return Err(shape_err(
                "w2 shape",
                format!("{d_ff}x{d}"),
                format!("{}x{}", w2.rows, w2.cols),
            ));
        }
        if b2.len() != d {
            return Err(shape_err("b2 length", d, b2.len()));
        }
        if b1.iter().chain(&b2).any(|x| !x.is_finite()) {
            return Err(KernelError::NonFinite("ffn bias"));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            w1: Matrix::identity(d),
            b1: vec![0.0; d],
            w2: Matrix::identity(d),
            b2: vec![0.0; d],
            activation: Activation::Identity,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix, KernelError> {
        if x.cols != self.model_dim() {
            return Err(shape_err("ffn input width", self.model_dim(), x.cols));
        }
        let mut hidden = x.matmul(&self.w1)?;
        for row in hidden.data.chunks_mut(self.b1.len().max(1)) {
            for (h, b) in row.iter_mut().zip(&self.b1) {
                *h += b;
                if self.activation == Activation::Relu {
                    *h = h.max(0.0);
                }
            }
        }
        let mut out = hidden.matmul(&self.w2)?;
        for row in out.data.chunks_mut(self.b2.len().max(1)) {
            for (o, b) in row.iter_mut().zip(&self.b2) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// Average-attention context: row `i` is `FFN(mean(y_1..y_i))`.
pub fn aan_context(y: &Matrix, ffn: &FfnParams) -> Result<Matrix, KernelError> {
    if y.rows == 0 {
        return Err(KernelError::Empty("Y"));
    }
    if y.cols != ffn.model_dim() {
        return Err(shape_err("Y width", ffn.model_dim(), y.cols));
    }
    let mut running = vec![0.0; y.cols];
    let mut means = Matrix::zeros(y.rows, y.cols);
    for i in 0..y.rows {
        for (acc, &v) in running.iter_mut().zip(y.row(i)) {
            *acc += v;
        }
        let denom = (i + 1) as f64;
        for (j, acc) in running.iter().enumerate() {
            means.set(i, j, acc / denom);
        }
    }
    ffn.apply(&means)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for row in out.data.chunks_mut(m.cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    out
}

/// `Q K^T / sqrt(k)` for one head.
pub fn attention_logits(q: &Matrix, k: &Matrix) -> Result<Matrix, KernelError> {
    if q.cols != k.cols {
        return Err(shape_err("key dimension", q.cols, k.cols));
    }
    if k.rows == 0 {
        return Err(KernelError::Empty("K"));
    }
    Ok(q.matmul(&k.transpose())?
        .scale(1.0 / (q.cols as f64).sqrt()))
}

/// `softmax(Q K^T / sqrt(k)) V`.
pub fn standard_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix, KernelError> {
    if v.rows != k.rows {
        return Err(shape_err("V rows", k.rows, v.rows));
    }
    softmax_rows(&attention_logits(q, k)?).matmul(v)
}

/// Mixes per-head `(query, key)` grids along the head axis:
/// `out[g] = sum_h maps[h] * w[h][g]`.
pub fn mix_heads(maps: &[Matrix], w: &Matrix) -> Vec<Matrix> {
    let heads = maps.len();
    let (r, c) = maps[0].shape();
    (0..heads)
        .map(|g| {
            let mut out = Matrix::zeros(r, c);
            for (h, m) in maps.iter().enumerate() {
                let weight = w.get(h, g);
                if weight == 0.0 {
                    continue;
                }
                for (o, x) in out.data.iter_mut().zip(&m.data) {
                    *o += weight * x;
                }
            }
            out
        })
        .collect()
}

fn check_mixers(heads: usize, w_l: &Matrix, w_a: &Matrix) -> Result<(), KernelError> {
    if heads == 0 {
        return Err(KernelError::Empty("heads"));
    }
    for (what, w) in [("W_l shape", w_l), ("W_a shape", w_a)] {
        if w.shape() != (heads, heads) {
            return Err(shape_err(
                what,
                format!("{heads}x{heads}"),
                format!("{}x{}", w.rows, w.cols),
            ));
        }
    }
    Ok(())
}

fn check_same_shape(ms: &[Matrix], what: &'static str) -> Result<(), KernelError> {
    match ms.iter().find(|m| m.shape() != ms[0].shape()) {
        Some(m) => Err(shape_err(
            what,
            format!("{:?}", ms[0].shape()),
            format!("{:?}", m.shape()),
        )),
        None => Ok(()),
    }
}

/// Mixed attention probabilities, one `(queries x keys)` map per head:
/// logits are mixed by `W_l`, softmaxed, then mixed again by `W_a`.
pub fn talking_heads_scores(
    q: &[Matrix],
    k: &[Matrix],
    w_l: &Matrix,
    w_a: &Matrix,
) -> Result<Vec<Matrix>, KernelError> {
    check_mixers(q.len(), w_l, w_a)?;
    if k.len() != q.len() {
        return Err(shape_err("key head count", q.len(), k.len()));
    }
    check_same_shape(q, "Q head shape")?;
    check_same_shape(k, "K head shape")?;
    let logits = q
        .iter()
        .zip(k)
        .map(|(q, k)| attention_logits(q, k))
        .collect::<Result<Vec<_>, _>>()?;
    let probs: Vec<Matrix> = mix_heads(&logits, w_l).iter().map(softmax_rows).collect();
    Ok(mix_heads(&probs, w_a))
}

/// `softmax(Q K^T / sqrt(k) . W_l) . W_a . V` with mixing along the head axis.
pub fn talking_heads_attention(
    q: &[Matrix],
    k: &[Matrix],
    v: &[Matrix],
    w_l: &Matrix,
    w_a: &Matrix,
) -> Result<Vec<Matrix>, KernelError> {
    check_mixers(q.len(), w_l, w_a)?;
    if v.len() != q.len() {
        return Err(shape_err("value head count", q.len(), v.len()));
    }
    check_same_shape(v, "V head shape")?;
    if k.first().map(Matrix::rows) != Some(v[0].rows) {
        return Err(shape_err(
            "V rows",
            k.first().map_or(0, Matrix::rows),
            v[0].rows,
        ));
    }
    talking_heads_scores(q, k, w_l, w_a)?
        .iter()
        .zip(v)
        .map(|(p, v)| p.matmul(v))
        .collect()
}
