//! Small dense linear algebra: Gram matrices, Hadamard / Khatri-Rao products,
//! generalized inner products and a Jacobi eigensolver for symmetric PSD
//! matrices.
//!
//! Everything is stored row-major. Matrices handled here are either tall and
//! thin (factor matrices, touched row by row) or tiny and square (R x R Grams).

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Wraps a row-major buffer. Rejects empty shapes, length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot hold {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    /// Builds a matrix from a closure over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "hadamard of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Euclidean norms of the columns.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (n, v) in norms.iter_mut().zip(self.row(i)) {
                *n += v * v;
            }
        }
        norms.iter_mut().for_each(|n| *n = n.sqrt());
        norms
    }

    /// Divides every column by the matching entry of `divisors`; zero divisors
    /// leave the column alone.
    pub fn scale_columns_inv(&mut self, divisors: &[f64]) {
        assert_eq!(divisors.len(), self.cols);
        for i in 0..self.rows {
            for (v, &d) in self.row_mut(i).iter_mut().zip(divisors) {
                if d != 0.0 {
                    *v /= d;
                }
            }
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(16) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 16 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `scale * x x^T` to the upper triangle of the square matrix `g`.
#[inline]
pub(crate) fn syr_upper(g: &mut Matrix, x: &[f64], scale: f64) {
    let n = x.len();
    for i in 0..n {
        let xi = scale * x[i];
        if xi == 0.0 {
            continue;
        }
        let row = &mut g.data[i * n..(i + 1) * n];
        for j in i..n {
            row[j] += xi * x[j];
        }
    }
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn mirror_upper(g: &mut Matrix) {
    let n = g.rows;
    for i in 0..n {
        for j in (i + 1)..n {
            g.data[j * n + i] = g.data[i * n + j];
        }
    }
}

/// `U^T U`, exactly symmetric.
pub fn gram(u: &Matrix) -> Matrix {
    let r = u.cols;
    let mut g = Matrix::zeros(r, r);
    for i in 0..u.rows {
        syr_upper(&mut g, u.row(i), 1.0);
    }
    mirror_upper(&mut g);
    g
}

/// Khatri-Rao product `A ⊙ B`: row `i1 * B.rows + i2` holds
/// `A[i1, :] * B[i2, :]`, so the row index of the left operand varies slowest.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "khatri-rao operands have {} and {} columns",
            a.cols, b.cols
        )));
    }
    let cols = a.cols;
    let mut data = Vec::with_capacity(a.rows * b.rows * cols);
    for i1 in 0..a.rows {
        let ra = a.row(i1);
        for i2 in 0..b.rows {
            data.extend(ra.iter().zip(b.row(i2)).map(|(x, y)| x * y));
        }
    }
    Ok(Matrix {
        rows: a.rows * b.rows,
        cols,
        data,
    })
}

/// Left-to-right Khatri-Rao product of a nonempty chain.
pub fn khatri_rao_chain(mats: &[&Matrix]) -> Result<Matrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty khatri-rao chain".into()))?;
    rest.iter()
        .try_fold((*first).clone(), |acc, m| khatri_rao(&acc, m))
}

/// Sum of all entries of `A * B * C` (entrywise).
pub fn gen_inner(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(Error::Shape("generalized inner product operands differ".into()));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .zip(&c.data)
        .map(|((x, y), z)| x * y * z)
        .sum())
}

/// Entrywise product of a chain; the empty chain is the all-ones matrix of
/// the given shape.
pub fn hadamard_chain(mats: &[&Matrix], rows: usize, cols: usize) -> Result<Matrix> {
    let mut acc = Matrix::filled(rows, cols, 1.0);
    for m in mats {
        if m.shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "hadamard chain expects {rows}x{cols}, got {:?}",
                m.shape()
            )));
        }
        for (a, b) in acc.data.iter_mut().zip(&m.data) {
            *a *= b;
        }
    }
    Ok(acc)
}

/// Eigendecomposition of a symmetric PSD matrix; columns of `vectors` are
/// eigenvectors, `values` descend and are nonnegative.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl EigenPair {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            let v = self.vectors.column(k);
            syr_upper(&mut out, &v, lam);
        }
        mirror_upper(&mut out);
        out
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Eigenvalues above this are treated as nonzero by [`pinv_psd`].
    pub fn rank_cutoff(&self) -> f64 {
        self.values.len() as f64 * f64::EPSILON * self.max_value()
    }

    pub fn rank(&self) -> usize {
        let cutoff = self.rank_cutoff();
        self.values.iter().filter(|&&v| v > cutoff && v > 0.0).count()
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;
const NEGATIVE_TOL: f64 = 1e-8;

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.data[i * n + j] * a.data[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric PSD matrix.
///
/// The input is symmetrized as `(G + G^T) / 2` first. Asymmetry above
/// `1e-10 * max(1, max|G|)` is rejected, as is any eigenvalue below
/// `-1e-8 * lambda_max`; smaller negative eigenvalues are clamped to zero.
pub fn eigh_psd(g: &Matrix) -> Result<EigenPair> {
    let n = g.rows;
    if n == 0 || g.cols != n {
        return Err(Error::Shape(format!("eigh of non-square {:?}", g.shape())));
    }
    if !g.is_finite() {
        return Err(Error::InvalidInput("eigh of non-finite matrix".into()));
    }
    let asym = g.max_asymmetry();
    if asym > SYMMETRY_TOL * g.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let mut v = Matrix::identity(n);
    let target = JACOBI_TOL * a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.data[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a.data[p * n + p];
                let aqq = a.data[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.data[k * n + p];
                    let akq = a.data[k * n + q];
                    a.data[k * n + p] = c * akp - s * akq;
                    a.data[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a.data[p * n + k];
                    let aqk = a.data[q * n + k];
                    a.data[p * n + k] = c * apk - s * aqk;
                    a.data[q * n + k] = s * apk + c * aqk;
                }
                a.data[p * n + q] = 0.0;
                a.data[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v.data[k * n + p];
                    let vkq = v.data[k * n + q];
                    v.data[k * n + p] = c * vkp - s * vkq;
                    v.data[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a.data[y * n + y].total_cmp(&a.data[x * n + x]));
    let raw: Vec<f64> = order.iter().map(|&k| a.data[k * n + k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v.data[i * n + order[j]]);

    let lam_max = raw[0].max(0.0);
    let floor = NEGATIVE_TOL * lam_max;
    let mut values = Vec::with_capacity(n);
    for &lam in &raw {
        if lam < -floor {
            return Err(Error::NotPsd {
                value: lam,
                max: lam_max,
            });
        }
        values.push(lam.max(0.0));
    }
    Ok(EigenPair { vectors, values })
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix. Eigenvalues at or
/// below `R * eps * lambda_max` are dropped.
pub fn pinv_psd(g: &Matrix) -> Result<Matrix> {
    Ok(pinv_from_eigen(&eigh_psd(g)?))
}

pub fn pinv_from_eigen(eig: &EigenPair) -> Matrix {
    let n = eig.values.len();
    let cutoff = eig.rank_cutoff();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam <= cutoff || lam == 0.0 {
            continue;
        }
        let v = eig.vectors.column(k);
        syr_upper(&mut out, &v, 1.0 / lam);
    }
    mirror_upper(&mut out);
    out
}
