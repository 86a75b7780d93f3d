#![allow(dead_code)]

use krpsample::dense::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Row-major Khatri-Rao product with the first operand slowest, built
/// entry by entry.
pub fn krp(mats: &[&Matrix]) -> Matrix {
    let r = mats[0].cols();
    let height: usize = mats.iter().map(|m| m.rows()).product();
    Matrix::from_fn(height, r, |i, c| {
        let mut rest = i;
        let mut v = 1.0;
        for m in mats.iter().rev() {
            v *= m[(rest % m.rows(), c)];
            rest /= m.rows();
        }
        v
    })
}

/// Orthonormal basis of the column space by twice-applied modified
/// Gram-Schmidt; columns that collapse below `1e-10` of the largest norm
/// are dropped.
pub fn orthonormal_basis(a: &Matrix) -> Vec<Vec<f64>> {
    let scale = a.column_norms().into_iter().fold(0.0, f64::max);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for c in 0..a.cols() {
        let mut v = a.column(c);
        for _ in 0..2 {
            for b in &q {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-10 * scale {
            v.iter_mut().for_each(|x| *x /= n);
            q.push(v);
        }
    }
    q
}

/// Leverage scores as squared row norms of an orthonormal basis.
pub fn leverage_qr(a: &Matrix) -> Vec<f64> {
    let q = orthonormal_basis(a);
    (0..a.rows()).map(|i| q.iter().map(|col| col[i] * col[i]).sum()).collect()
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// `min_x ‖A x - b‖` through the orthonormal basis: returns the residual.
pub fn lstsq_residual(a: &Matrix, b: &[f64]) -> f64 {
    let q = orthonormal_basis(a);
    let mut r = b.to_vec();
    for col in &q {
        let p: f64 = col.iter().zip(&r).map(|(x, y)| x * y).sum();
        r.iter_mut().zip(col).for_each(|(x, y)| *x -= p * y);
    }
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
