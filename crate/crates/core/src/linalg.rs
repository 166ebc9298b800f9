//! Dense double-precision linear algebra.
//!
//! Everything here is deliberately small and sequential: products
//! accumulate in a fixed row-major order so that identical inputs give
//! bitwise-identical outputs on every platform.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a 1x1 matrix.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.rows == 1 && self.cols == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        let end = end.min(self.rows);
        Matrix::from_raw(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    /// Gathers the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    /// Accumulates `other` into `self` in place.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }
}

/// Standard product `a · b`.
///
/// Each output entry accumulates `a[i][k] * b[k][j]` for ascending `k`,
/// starting from zero.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (n, m, p) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a.data[i * m + k];
            let brow = &b.data[k * p..(k + 1) * p];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(n, p, out))
}

/// Sum of squared entries.
pub fn frobenius_norm_sq(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum()
}

/// Square matrix of pairwise inner products between examples, `X · Xᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    inner: Matrix,
}

impl GramMatrix {
    pub fn new(inner: Matrix) -> Result<Self> {
        if inner.rows != inner.cols {
            return Err(Error::shape(
                "gram",
                format!("{}x{} is not square", inner.rows, inner.cols),
            ));
        }
        Ok(GramMatrix { inner })
    }

    /// Linear-kernel Gram matrix of the rows of `x`.
    pub fn linear(x: &Matrix) -> Self {
        GramMatrix {
            inner: gram(x),
        }
    }

    pub fn size(&self) -> usize {
        self.inner.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }
}

/// `x · xᵀ`, filled symmetrically so the result is exactly symmetric.
pub(crate) fn gram(x: &Matrix) -> Matrix {
    let n = x.rows;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (a, b) in x.row(i).iter().zip(x.row(j)) {
                s += a * b;
            }
            out.data[i * n + j] = s;
            out.data[j * n + i] = s;
        }
    }
    out
}

/// Applies `H·K·H` with `H = I − 𝟙𝟙ᵀ/n`, without materializing `H`.
pub(crate) fn center_square(k: &Matrix) -> Matrix {
    let n = k.rows;
    let inv = 1.0 / n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() * inv).collect();
    let col_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| k.data[i * n + j]).sum::<f64>() * inv)
        .collect();
    let grand = row_means.iter().sum::<f64>() * inv;
    Matrix::from_fn(n, n, |i, j| k.data[i * n + j] - row_means[i] - col_means[j] + grand)
}

/// Double-centers a Gram matrix: returns `H·K·H`.
pub fn center_gram(k: &GramMatrix) -> Result<GramMatrix> {
    if k.size() < 2 {
        return Err(Error::invalid(format!(
            "centering needs at least 2 examples, got {}",
            k.size()
        )));
    }
    Ok(GramMatrix {
        inner: center_square(&k.inner),
    })
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(sigma: &Matrix) -> Result<Matrix> {
    let n = sigma.rows;
    if sigma.cols != n {
        return Err(Error::shape("cholesky", format!("{}x{}", n, sigma.cols)));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = sigma.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d.is_nan() || d <= 1e-12 {
            return Err(Error::NotPositiveDefinite { index: j, value: d });
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = sigma.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// `ln|Σ|` via the Cholesky factor: `2·Σ ln Lᵢᵢ`.
pub fn cholesky_logdet(sigma: &Matrix) -> Result<f64> {
    let l = cholesky(sigma)?;
    Ok(2.0 * (0..l.rows).map(|i| l.get(i, i).ln()).sum::<f64>())
}

/// Seeded random source.
///
/// Backed by ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), whose
/// output stream is fixed by its published definition and therefore
/// identical across platforms.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named sub-stream of this seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, bound: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform_in(-bound, bound))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..len`, uniformly without replacement.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, amount).into_vec()
    }
}

/// Random orthogonal `n×n` matrix from Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Matrix {
    assert!(n >= 1, "random_orthogonal needs n >= 1");
    'retry: for _ in 0..32 {
        let g = rng.gaussian_matrix(n, n);
        // columns of q are built from columns of g
        let mut q = Matrix::zeros(n, n);
        for j in 0..n {
            let mut v: Vec<f64> = (0..n).map(|i| g.get(i, j)).collect();
            // two passes of modified Gram-Schmidt keep QᵀQ tight
            for _ in 0..2 {
                for k in 0..j {
                    let dot: f64 = (0..n).map(|i| q.get(i, k) * v[i]).sum();
                    for (i, vi) in v.iter_mut().enumerate() {
                        *vi -= dot * q.get(i, k);
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue 'retry;
            }
            for (i, vi) in v.iter().enumerate() {
                q.set(i, j, vi / norm);
            }
        }
        return q;
    }
    panic!("random_orthogonal: repeated rank deficiency");
}

/// Formats like C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    const PREC: i32 = 17;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= PREC {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let fixed = format!("{:.*}", (PREC - 1 - exp) as usize, v);
        strip_zeros(&fixed).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl Matrix {
    /// Text form: `rows cols` on the first line, then one row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|&v| format_g17(v)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Matrix> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix text".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad dimension {t:?}"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse(format!("bad header {header:?}")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for (r, line) in lines.enumerate() {
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {tok:?} on row {r}")))?,
                );
            }
            if data.len() - before != cols {
                return Err(Error::Parse(format!(
                    "row {r} has {} values, expected {cols}",
                    data.len() - before
                )));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}
