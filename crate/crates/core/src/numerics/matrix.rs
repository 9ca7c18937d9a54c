//! Dense row-major matrices.
//!
//! Storage and elementwise arithmetic use the matrix scalar type (`f32` for
//! training, `f64` for reference computations). Reductions (dot products,
//! row sums, norms) accumulate in `f64`. Matrix products multiply-add in the
//! scalar type over short blocks of the reduction axis and combine the blocks
//! in `f64`, which keeps `f32` results within a few ulps of the exact value.

use std::fmt;

use num_traits::Float;

use crate::error::{MaflError, Result};

/// Scalar types a [`Matrix`] can hold.
pub trait Real: Float + Default + fmt::Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn push_le_bytes(self, out: &mut Vec<u8>);
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn push_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn push_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Reduction-axis block length for the mixed-precision product kernel.
const GEMM_BLOCK: usize = 16;

#[derive(Clone, PartialEq)]
pub struct Matrix<T: Real = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries((0..self.rows).map(|r| self.row(r)))
                .finish()?;
        }
        Ok(())
    }
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MaflError::dim(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(MaflError::dim(format!("Matrix::from_rows row {i}"), cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(MaflError::Numeric(context.to_string()))
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    fn check_same_shape(&self, other: &Self, context: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MaflError::dim(
                context,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "Matrix::add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "Matrix::axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.data {
            *v = *v * alpha;
        }
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &[T]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(MaflError::dim("Matrix::add_row_broadcast", self.cols, bias.len()));
        }
        for r in 0..self.rows {
            for (v, &b) in self.row_mut(r).iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
        Ok(())
    }

    /// Column sums, accumulated in `f64`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for r in 0..self.rows {
            for (a, &v) in acc.iter_mut().zip(self.row(r)) {
                *a += v.as_f64();
            }
        }
        acc
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(MaflError::dim(
                "Matrix::matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                other.rows,
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            &self.data,
            self.rows,
            self.cols,
            &other.data,
            other.cols,
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(MaflError::dim(
                "Matrix::matmul_tn",
                format!("lhs rows == rhs rows ({})", self.rows),
                other.rows,
            ));
        }
        self.transpose().matmul(other)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(MaflError::dim(
                "Matrix::matmul_nt",
                format!("lhs cols == rhs cols ({})", self.cols),
                other.cols,
            ));
        }
        self.matmul(&other.transpose())
    }

    /// Little-endian byte image of the data (used for hashing and files).
    pub fn le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        self.extend_le_bytes(&mut out);
        out
    }

    pub(crate) fn extend_le_bytes(&self, out: &mut Vec<u8>) {
        for &v in &self.data {
            v.push_le_bytes(out);
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, row-major, `out` pre-zeroed.
fn gemm<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize, out: &mut [T]) {
    let mut block = vec![T::zero(); n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        acc.fill(0.0);
        for kb in (0..k).step_by(GEMM_BLOCK) {
            let end = (kb + GEMM_BLOCK).min(k);
            block.fill(T::zero());
            let mut touched = false;
            for (kk, &av) in a_row[kb..end].iter().enumerate() {
                // ReLU activations are frequently exactly zero.
                if av == T::zero() {
                    continue;
                }
                touched = true;
                let b_row = &b[(kb + kk) * n..(kb + kk + 1) * n];
                for (c, &bv) in block.iter_mut().zip(b_row) {
                    *c = *c + av * bv;
                }
            }
            if touched {
                for (d, &c) in acc.iter_mut().zip(&block) {
                    *d += c.as_f64();
                }
            }
        }
        for (o, &d) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = T::from_f64(d);
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Result<Matrix<T>> {
    if logits.cols() < 2 {
        return Err(MaflError::Config(format!(
            "softmax needs at least 2 classes, got {}",
            logits.cols()
        )));
    }
    logits.ensure_finite("softmax_rows input")?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    let mut buf = vec![0.0f64; logits.cols()];
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), &mut buf);
        for (o, &p) in out.row_mut(r).iter_mut().zip(&buf) {
            *o = T::from_f64(p);
        }
    }
    Ok(out)
}

/// Softmax of one row into an `f64` buffer.
pub(crate) fn softmax_into<T: Real>(row: &[T], out: &mut [f64]) {
    let max = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v.as_f64() - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Rescales each row to unit Euclidean norm. Zero rows stay zero.
pub fn l2_normalize_rows<T: Real>(features: &Matrix<T>) -> Matrix<T> {
    let mut out = features.clone();
    for r in 0..out.rows() {
        let norm = row_norm(out.row(r));
        if norm > 0.0 {
            for v in out.row_mut(r) {
                *v = T::from_f64(v.as_f64() / norm);
            }
        }
    }
    out
}

#[inline]
pub(crate) fn row_norm<T: Real>(row: &[T]) -> f64 {
    row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}
