//! Dense, sparse and Kruskal tensors, with the matricization indexing and
//! the contractions ALS needs.
//!
//! Coordinates are 0-based in memory. The mode-`j` unfolding puts `i_j` on
//! the rows and encodes the remaining coordinates, first mode fastest, as
//! the column `u = Σ_{k≠j} i_k Π_{m<k, m≠j} I_m`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::{gram, hadamard_chain, Matrix};
use crate::error::{Error, Result};
use crate::krp::SampleBatch;

/// Column of the mode-`j` unfolding holding `coords`.
pub fn matricize_column_index(coords: &[usize], j: usize, dims: &[usize]) -> Result<usize> {
    if coords.len() != dims.len() || j >= dims.len() {
        return Err(Error::Shape(format!(
            "{} coordinates, {} modes, mode {j}",
            coords.len(),
            dims.len()
        )));
    }
    let mut u = 0usize;
    let mut stride = 1usize;
    for (k, (&i, &n)) in coords.iter().zip(dims).enumerate() {
        if i >= n {
            return Err(Error::OutOfRange { index: i, bound: n });
        }
        if k == j {
            continue;
        }
        u += i * stride;
        stride *= n;
    }
    Ok(u)
}

fn checked_volume(dims: &[usize], skip: Option<usize>) -> Result<usize> {
    dims.iter()
        .enumerate()
        .filter(|&(k, _)| Some(k) != skip)
        .try_fold(1usize, |acc, (_, &n)| acc.checked_mul(n))
        .ok_or(Error::TooLarge {
            what: "unfolding width",
            size: dims.iter().map(|&n| n as u128).product(),
            limit: usize::MAX as u128,
        })
}

/// Dense tensor, first mode fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid dims {dims:?}")));
        }
        let n = checked_volume(&dims, None)?;
        if values.len() != n {
            return Err(Error::Shape(format!("{} values for dims {dims:?}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite tensor value".into()));
        }
        Ok(DenseTensor { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = checked_volume(&dims, None)?;
        DenseTensor::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn offset(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.values[self.offset(coords)]
    }

    pub fn set(&mut self, coords: &[usize], v: f64) {
        let o = self.offset(coords);
        self.values[o] = v;
    }

    /// Calls `f(coords, value)` for every entry in storage order.
    pub fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut coords = vec![0; self.dims.len()];
        for &v in &self.values {
            f(&coords, v);
            for (c, &n) in coords.iter_mut().zip(&self.dims) {
                *c += 1;
                if *c < n {
                    break;
                }
                *c = 0;
            }
        }
    }

    /// The mode-`j` unfolding as an `I_j x Π_{k≠j} I_k` matrix.
    pub fn unfold(&self, j: usize) -> Result<Matrix> {
        let width = checked_volume(&self.dims, Some(j))?;
        let mut m = Matrix::zeros(self.dims[j], width);
        let mut err = None;
        self.for_each(|c, v| match matricize_column_index(c, j, &self.dims) {
            Ok(u) => m[(c[j], u)] = v,
            Err(e) => err = Some(e),
        });
        match err {
            Some(e) => Err(e),
            None => Ok(m),
        }
    }

    pub fn to_sparse(&self) -> SparseTensorCoo {
        let mut entries = Vec::new();
        self.for_each(|c, v| {
            if v != 0.0 {
                entries.push((c.to_vec(), v));
            }
        });
        SparseTensorCoo::from_entries(self.dims.clone(), entries).expect("coordinates in range")
    }
}

/// Sparse tensor in coordinate form with a per-mode fiber index.
#[derive(Clone, Debug)]
pub struct SparseTensorCoo {
    dims: Vec<usize>,
    coords: Vec<usize>,
    values: Vec<f64>,
    /// For each mode `j`: unfolding column -> `(i_j, value)` pairs.
    fibers: Vec<HashMap<usize, Vec<(usize, f64)>>>,
}

impl SparseTensorCoo {
    /// Builds from 0-based coordinates; duplicates are summed.
    pub fn from_entries(dims: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid dims {dims:?}")));
        }
        for j in 0..dims.len() {
            checked_volume(&dims, Some(j))?;
        }
        let n = dims.len();
        let mut slot: HashMap<Vec<usize>, usize> = HashMap::with_capacity(entries.len());
        let mut coords = Vec::with_capacity(entries.len() * n);
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            if c.len() != n {
                return Err(Error::Shape(format!("{} coordinates for {n} modes", c.len())));
            }
            if let Some((&i, &d)) = c.iter().zip(&dims).find(|(&i, &d)| i >= d) {
                return Err(Error::OutOfRange { index: i, bound: d });
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite tensor value".into()));
            }
            match slot.get(&c) {
                Some(&p) => values[p] += v,
                None => {
                    slot.insert(c.clone(), values.len());
                    coords.extend_from_slice(&c);
                    values.push(v);
                }
            }
        }
        let mut t = SparseTensorCoo {
            dims,
            coords,
            values,
            fibers: Vec::new(),
        };
        t.index_fibers();
        Ok(t)
    }

    fn index_fibers(&mut self) {
        let n = self.dims.len();
        self.fibers = (0..n)
            .map(|j| {
                let mut map: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
                for (c, &v) in self.coords.chunks(n).zip(&self.values) {
                    let u = matricize_column_index(c, j, &self.dims).expect("validated coordinates");
                    map.entry(u).or_default().push((c[j], v));
                }
                map
            })
            .collect();
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coords(&self, e: usize) -> &[usize] {
        let n = self.dims.len();
        &self.coords[e * n..(e + 1) * n]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.coords.chunks(self.dims.len()).zip(self.values.iter().copied())
    }

    /// Nonzeros on the mode-`j` fiber at unfolding column `u`.
    pub fn fiber(&self, j: usize, u: usize) -> &[(usize, f64)] {
        self.fibers[j].get(&u).map_or(&[], |v| v.as_slice())
    }

    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        self.values.iter_mut().for_each(|v| *v = f(*v));
        self.index_fibers();
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut t = DenseTensor::zeros(self.dims.clone())?;
        for (c, v) in self.entries() {
            t.set(c, v);
        }
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub enum Tensor {
    Dense(DenseTensor),
    Sparse(SparseTensorCoo),
}

impl From<DenseTensor> for Tensor {
    fn from(t: DenseTensor) -> Self {
        Tensor::Dense(t)
    }
}

impl From<SparseTensorCoo> for Tensor {
    fn from(t: SparseTensorCoo) -> Self {
        Tensor::Sparse(t)
    }
}

impl Tensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            Tensor::Dense(t) => t.dims(),
            Tensor::Sparse(t) => t.dims(),
        }
    }

    pub fn order(&self) -> usize {
        self.dims().len()
    }

    pub fn norm_sq(&self) -> f64 {
        let vals = match self {
            Tensor::Dense(t) => t.values(),
            Tensor::Sparse(t) => t.values(),
        };
        vals.iter().map(|v| v * v).sum()
    }

    fn for_each_nonzero(&self, mut f: impl FnMut(&[usize], f64)) {
        match self {
            Tensor::Dense(t) => t.for_each(|c, v| {
                if v != 0.0 {
                    f(c, v)
                }
            }),
            Tensor::Sparse(t) => t.entries().for_each(|(c, v)| f(c, v)),
        }
    }

    /// `x -> log(1 + x)` on every stored value.
    pub fn log1p(&self) -> Tensor {
        match self {
            Tensor::Dense(t) => Tensor::Dense(DenseTensor {
                dims: t.dims.clone(),
                values: t.values.iter().map(|v| v.ln_1p()).collect(),
            }),
            Tensor::Sparse(t) => {
                let mut s = t.clone();
                s.map_values(f64::ln_1p);
                Tensor::Sparse(s)
            }
        }
    }

    /// `mat(T, j) · (⊙_{k≠j} U_k)` in the reversed-product column order,
    /// `I_j x R`.
    pub fn mttkrp(&self, j: usize, factors: &[Matrix]) -> Result<Matrix> {
        self.check_factors(factors)?;
        let r = factors[0].cols();
        let mut m = Matrix::zeros(self.dims()[j], r);
        let mut h = vec![0.0; r];
        self.for_each_nonzero(|c, v| {
            h.fill(v);
            for (k, u) in factors.iter().enumerate() {
                if k != j {
                    h.iter_mut().zip(u.row(c[k])).for_each(|(a, b)| *a *= b);
                }
            }
            m.row_mut(c[j]).iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        });
        Ok(m)
    }

    /// `<T, [[σ; U_1, ..., U_N]]>`.
    pub fn inner(&self, model: &KruskalTensor) -> Result<f64> {
        self.check_factors(&model.factors)?;
        let mut s = 0.0;
        self.for_each_nonzero(|c, v| s += v * model.entry(c));
        Ok(s)
    }

    fn check_factors(&self, factors: &[Matrix]) -> Result<()> {
        let dims = self.dims();
        if factors.len() != dims.len() {
            return Err(Error::Shape(format!("{} factors for order {}", factors.len(), dims.len())));
        }
        let r = factors[0].cols();
        for (k, (u, &n)) in factors.iter().zip(dims).enumerate() {
            if u.rows() != n || u.cols() != r {
                return Err(Error::Shape(format!(
                    "factor {k} is {}x{}, expected {n}x{r}",
                    u.rows(),
                    u.cols()
                )));
            }
        }
        Ok(())
    }

    /// Rows of `mat(T, j)^T` at the batch's multi-indices, `J x I_j`.
    pub fn sampled_rhs_rows(&self, j: usize, batch: &SampleBatch) -> Result<Matrix> {
        let dims = self.dims();
        if j >= dims.len() {
            return Err(Error::OutOfRange { index: j, bound: dims.len() });
        }
        let expected: Vec<usize> = (0..dims.len()).filter(|&k| k != j).collect();
        if batch.modes != expected {
            return Err(Error::Shape(format!(
                "batch covers modes {:?}, expected {:?}",
                batch.modes, expected
            )));
        }
        let mut out = Matrix::zeros(batch.count(), dims[j]);
        let mut coords = vec![0; dims.len()];
        for (d, idx) in batch.multi_indices().enumerate() {
            for (&k, &t) in expected.iter().zip(idx) {
                if t >= dims[k] {
                    return Err(Error::OutOfRange { index: t, bound: dims[k] });
                }
                coords[k] = t;
            }
            coords[j] = 0;
            let row = out.row_mut(d);
            match self {
                Tensor::Dense(t) => {
                    let stride: usize = dims[..j].iter().product();
                    let base = t.offset(&coords);
                    for (i, x) in row.iter_mut().enumerate() {
                        *x = t.values[base + i * stride];
                    }
                }
                Tensor::Sparse(t) => {
                    let u = matricize_column_index(&coords, j, dims)?;
                    for &(i, v) in t.fiber(j, u) {
                        row[i] = v;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `Σ_r σ_r U_1[:, r] ∘ ... ∘ U_N[:, r]` with unit-norm factor columns.
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalTensor {
    pub sigma: Vec<f64>,
    pub factors: Vec<Matrix>,
}

impl KruskalTensor {
    pub fn new(sigma: Vec<f64>, factors: Vec<Matrix>) -> Result<Self> {
        let r = sigma.len();
        if factors.is_empty() || factors.iter().any(|u| u.cols() != r) {
            return Err(Error::Shape("factor column counts must equal the rank".into()));
        }
        if sigma.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        for (k, u) in factors.iter().enumerate() {
            for (c, n) in u.column_norms().into_iter().enumerate() {
                if (n - 1.0).abs() > 1e-8 && !(n == 0.0 && sigma[c] == 0.0) {
                    return Err(Error::InvalidInput(format!("column {c} of factor {k} has norm {n}")));
                }
            }
        }
        Ok(KruskalTensor { sigma, factors })
    }

    /// Moves column norms of arbitrary factors into the weights.
    pub fn from_factors(mut factors: Vec<Matrix>) -> Result<Self> {
        let r = factors.first().map_or(0, |u| u.cols());
        let mut sigma = vec![1.0; r];
        for u in &mut factors {
            let norms = u.column_norms();
            u.scale_columns_inv(&norms);
            sigma.iter_mut().zip(&norms).for_each(|(s, n)| *s *= n);
        }
        KruskalTensor::new(sigma, factors)
    }

    /// Gaussian factors with unit columns and `σ = 1`.
    pub fn random<G: Rng + ?Sized>(dims: &[usize], rank: usize, rng: &mut G) -> Result<Self> {
        let factors = dims
            .iter()
            .map(|&n| {
                let data = (0..n * rank).map(|_| rng.sample(StandardNormal)).collect();
                Matrix::from_vec(n, rank, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut k = KruskalTensor::from_factors(factors)?;
        k.sigma.fill(1.0);
        Ok(k)
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|u| u.rows()).collect()
    }

    pub fn entry(&self, coords: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.sigma[r]
                    * self
                        .factors
                        .iter()
                        .zip(coords)
                        .map(|(u, &i)| u[(i, r)])
                        .product::<f64>()
            })
            .sum()
    }

    /// `‖T̃‖² = σ^T (⊛_j G_j) σ`.
    pub fn norm_sq(&self) -> f64 {
        let r = self.rank();
        let grams: Vec<Matrix> = self.factors.iter().map(gram).collect();
        let g = hadamard_chain(&grams.iter().collect::<Vec<_>>(), r, r).expect("square grams");
        crate::krp::quad_form(&g, &self.sigma)
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut t = DenseTensor::zeros(self.dims())?;
        let mut vals = Vec::with_capacity(t.values.len());
        t.for_each(|c, _| vals.push(self.entry(c)));
        t.values = vals;
        Ok(t)
    }
}

/// `1 - ‖T̃ - T‖ / ‖T‖` computed from Gram matrices and the nonzeros of `T`.
pub fn fit(model: &KruskalTensor, tensor: &Tensor) -> Result<f64> {
    if model.dims() != tensor.dims() {
        return Err(Error::Shape(format!(
            "model dims {:?} vs tensor dims {:?}",
            model.dims(),
            tensor.dims()
        )));
    }
    let t2 = tensor.norm_sq();
    if t2 == 0.0 {
        return Err(Error::InvalidInput("tensor is zero".into()));
    }
    Ok(1.0 - residual_sq(model, tensor).sqrt() / t2.sqrt())
}

/// `‖T̃ - T‖²`. Dense tensors are compared entry by entry. For sparse ones
/// the error on the support is summed directly and the model mass off the
/// support comes from `‖T̃‖²`, which avoids the cancellation in
/// `‖T‖² - 2<T, T̃> + ‖T̃‖²` when the fit is close to 1.
fn residual_sq(model: &KruskalTensor, tensor: &Tensor) -> f64 {
    match tensor {
        Tensor::Dense(t) => {
            let mut s = 0.0;
            t.for_each(|c, v| s += (v - model.entry(c)).powi(2));
            s
        }
        Tensor::Sparse(t) => {
            let (mut on, mut model_on) = (0.0, 0.0);
            for (c, v) in t.entries() {
                let m = model.entry(c);
                on += (v - m).powi(2);
                model_on += m * m;
            }
            on + (model.norm_sq() - model_on).max(0.0)
        }
    }
}
