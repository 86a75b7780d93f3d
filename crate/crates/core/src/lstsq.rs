//! Sketched least squares with Khatri-Rao design matrices.
//!
//! A sketch keeps `J` sampled rows of `A` and `B`, each scaled by
//! `1 / sqrt(J q_i)`, and solves the reduced problem through the normal
//! equations. The design rows come straight from the sampler as Hadamard
//! products of factor rows, so `A` is never formed.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::{eigh_psd, gram, hadamard_chain, pinv_from_eigen, pinv_psd, Matrix};
use crate::error::{Error, Result};
use crate::krp::{quad_form, KrpSampler, SampleBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct SketchConfig {
    pub samples: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl SketchConfig {
    pub fn new(samples: usize, epsilon: f64, delta: f64, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidInput("sample count must be positive".into()));
        }
        for (name, v) in [("epsilon", epsilon), ("delta", delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(SketchConfig {
            samples,
            epsilon,
            delta,
            seed,
        })
    }

    /// Sample count `R max(log(R/δ), 1/(εδ))` that guarantees a
    /// `(1+ε)`-accurate residual with probability `1-δ`, up to constants.
    pub fn advisory_samples(&self, rank: usize) -> f64 {
        let r = rank as f64;
        r * (r / self.delta).ln().max(1.0 / (self.epsilon * self.delta))
    }
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            samples: 1024,
            epsilon: 0.1,
            delta: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowSampleWeights {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Row weights `1 / sqrt(J q)` for draws with probabilities `probabilities`.
pub fn make_sampling_weights(indices: &[usize], probabilities: &[f64], count: usize) -> Result<RowSampleWeights> {
    if indices.len() != probabilities.len() {
        return Err(Error::Shape(format!(
            "{} indices but {} probabilities",
            indices.len(),
            probabilities.len()
        )));
    }
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let weights = probabilities
        .iter()
        .map(|&q| {
            if q > 0.0 && q.is_finite() {
                Ok(1.0 / (count as f64 * q).sqrt())
            } else {
                Err(Error::ZeroProbability)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RowSampleWeights {
        indices: indices.to_vec(),
        weights,
    })
}

fn batch_weights(batch: &SampleBatch) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..batch.count()).collect();
    Ok(make_sampling_weights(&idx, &batch.probabilities, batch.count())?.weights)
}

/// The reweighted design `S A`.
pub fn sketched_design(batch: &SampleBatch) -> Result<Matrix> {
    let w = batch_weights(batch)?;
    let mut sa = batch.rows.clone();
    for (d, &wd) in w.iter().enumerate() {
        sa.row_mut(d).iter_mut().for_each(|x| *x *= wd);
    }
    Ok(sa)
}

/// Solves `min ||S A X - S B||_F` for sampled design rows in `batch` and the
/// matching rows of `B` (`J x m`). Returns `X` as `R x m`.
pub fn solve_sampled(batch: &SampleBatch, rhs_rows: &Matrix) -> Result<Matrix> {
    if rhs_rows.rows() != batch.count() {
        return Err(Error::Shape(format!(
            "{} right-hand side rows for {} samples",
            rhs_rows.rows(),
            batch.count()
        )));
    }
    let w = batch_weights(batch)?;
    let (j, r) = batch.rows.shape();
    let m = rhs_rows.cols();
    // w^2 scales both sides, so fold it once into the design rows
    let mut ata = Matrix::zeros(r, r);
    let mut atb = Matrix::zeros(r, m);
    for d in 0..j {
        let w2 = w[d] * w[d];
        let a = batch.rows.row(d);
        let b = rhs_rows.row(d);
        for p in 0..r {
            let ap = w2 * a[p];
            if ap == 0.0 {
                continue;
            }
            for q in 0..r {
                ata[(p, q)] += ap * a[q];
            }
            let row = atb.row_mut(p);
            for (x, &bv) in row.iter_mut().zip(b) {
                *x += ap * bv;
            }
        }
    }
    let eig = eigh_psd(&ata)?;
    if eig.rank() == 0 {
        return Err(Error::DegenerateSketch);
    }
    pinv_from_eigen(&eig).matmul(&atb)
}

/// Draws `cfg.samples` rows of `⊙_{k≠j} U_k` from the sampler, fetches the
/// matching rows of `B` through `rhs_rows` and solves the sketched problem.
pub fn sketched_solve<G, F>(
    sampler: &KrpSampler,
    excluded: Option<usize>,
    rhs_rows: F,
    cfg: &SketchConfig,
    rng: &mut G,
) -> Result<Matrix>
where
    G: Rng + ?Sized,
    F: FnOnce(&SampleBatch) -> Result<Matrix>,
{
    let batch = sampler.sample(excluded, cfg.samples, rng)?;
    let b = rhs_rows(&batch).map_err(|e| match e {
        Error::Rhs(_) => e,
        other => Error::Rhs(other.to_string()),
    })?;
    solve_sampled(&batch, &b)
}

/// Raw leverage scores `a_i^T (A^T A)^+ a_i` of a materialized matrix.
pub fn leverage_scores(a: &Matrix) -> Result<Vec<f64>> {
    let p = pinv_psd(&gram(a))?;
    Ok((0..a.rows()).map(|i| quad_form(&p, a.row(i))).collect())
}

/// Draws multi-indices independently per factor from each factor's own
/// leverage distribution. Probabilities are the per-factor products.
pub fn product_lev_sample<G: Rng + ?Sized>(
    factors: &[Matrix],
    excluded: Option<usize>,
    count: usize,
    rng: &mut G,
) -> Result<SampleBatch> {
    if factors.is_empty() {
        return Err(Error::InvalidInput("no factor matrices".into()));
    }
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let r = factors[0].cols();
    if factors.iter().any(|f| f.cols() != r) {
        return Err(Error::Shape("factor matrices have different column counts".into()));
    }
    if let Some(j) = excluded {
        if j >= factors.len() {
            return Err(Error::OutOfRange { index: j, bound: factors.len() });
        }
    }
    let modes: Vec<usize> = (0..factors.len()).filter(|&k| Some(k) != excluded).collect();
    if modes.is_empty() {
        return Err(Error::InvalidInput("cannot exclude the only factor".into()));
    }

    let mut dists = Vec::with_capacity(modes.len());
    for &k in &modes {
        let lev = leverage_scores(&factors[k])?;
        let total: f64 = lev.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput(format!("factor {k} is zero")));
        }
        let probs: Vec<f64> = lev.iter().map(|l| l.max(0.0) / total).collect();
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| Error::InvalidInput(format!("factor {k}: {e}")))?;
        dists.push((probs, sampler));
    }

    let n = modes.len();
    let mut indices = Vec::with_capacity(count * n);
    let mut probabilities = Vec::with_capacity(count);
    let mut rows = Matrix::zeros(count, r);
    for d in 0..count {
        let mut p = 1.0;
        let row = rows.row_mut(d);
        row.fill(1.0);
        for (&k, (probs, dist)) in modes.iter().zip(&dists) {
            let t = dist.sample(rng);
            p *= probs[t];
            row.iter_mut().zip(factors[k].row(t)).for_each(|(h, u)| *h *= u);
            indices.push(t);
        }
        probabilities.push(p);
    }
    let dims = modes.iter().map(|&k| factors[k].rows()).collect();
    Ok(SampleBatch::from_parts(excluded, modes, dims, indices, probabilities, rows))
}

/// `D = κ(S A V Σ^{-1}) - 1` where `A^T A = V Σ^2 V^T`. Returns `+∞` when
/// the sketch loses rank.
pub fn distortion(sa: &Matrix, ata: &Matrix) -> Result<f64> {
    if sa.cols() != ata.rows() {
        return Err(Error::Shape(format!("sketch has {} columns, Gram is {}", sa.cols(), ata.rows())));
    }
    let eig = eigh_psd(ata)?;
    let keep = eig.rank();
    if keep == 0 {
        return Err(Error::InvalidInput("design matrix is zero".into()));
    }
    let r = ata.rows();
    let basis = Matrix::from_fn(r, keep, |a, u| eig.vectors[(a, u)] / eig.values[u].sqrt());
    let sq = sa.matmul(&basis)?;
    let s = eigh_psd(&gram(&sq))?;
    if s.rank() < keep {
        return Ok(f64::INFINITY);
    }
    let hi = s.values[0];
    let lo = s.values[keep - 1];
    Ok(((hi / lo).sqrt() - 1.0).max(0.0))
}

/// Distortion of a sampled sketch of `⊙_{k≠j} U_k`.
pub fn batch_distortion(batch: &SampleBatch, sampler: &KrpSampler) -> Result<f64> {
    distortion(&sketched_design(batch)?, &sampler.product_gram(batch.excluded)?)
}

/// `ε = approx / exact - 1`, or zero when both residuals vanish relative to
/// `‖B‖_F`.
pub fn residual_epsilon(exact: f64, approx: f64, rhs_norm: f64) -> f64 {
    let tol = 1e-10 * rhs_norm;
    if exact <= tol {
        return if approx <= tol { 0.0 } else { f64::INFINITY };
    }
    (approx / exact - 1.0).max(0.0)
}

/// Right-hand side `b = c_1 ⊗ ... ⊗ c_N` with black-box row access, laid out
/// to match `U_1 ⊙ ... ⊙ U_N`.
#[derive(Clone, Debug)]
pub struct KroneckerRhs {
    pub vectors: Vec<Vec<f64>>,
}

impl KroneckerRhs {
    pub fn random<G: Rng + ?Sized>(dims: &[usize], rng: &mut G) -> Self {
        KroneckerRhs {
            vectors: dims
                .iter()
                .map(|&n| (0..n).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
        }
    }

    pub fn entry(&self, index: &[usize]) -> f64 {
        self.vectors.iter().zip(index).map(|(c, &t)| c[t]).product()
    }

    /// Rows of `b` at the batch's multi-indices, as a `J x 1` matrix.
    pub fn rows(&self, batch: &SampleBatch) -> Result<Matrix> {
        let sub: Vec<&Vec<f64>> = batch.modes.iter().map(|&k| &self.vectors[k]).collect();
        let data = batch
            .multi_indices()
            .map(|idx| sub.iter().zip(idx).map(|(c, &t)| c[t]).product())
            .collect();
        Matrix::from_vec(batch.count(), 1, data)
    }

    pub fn norm_sq(&self, modes: &[usize]) -> f64 {
        modes
            .iter()
            .map(|&k| self.vectors[k].iter().map(|x| x * x).sum::<f64>())
            .product()
    }

    /// `A^T b` for `A = ⊙_{k ∈ modes} U_k`.
    pub fn project(&self, factors: &[Matrix], modes: &[usize]) -> Vec<f64> {
        let r = factors[0].cols();
        let mut out = vec![1.0; r];
        for &k in modes {
            let u = &factors[k];
            for (c, o) in out.iter_mut().enumerate() {
                *o *= (0..u.rows()).map(|t| u[(t, c)] * self.vectors[k][t]).sum::<f64>();
            }
        }
        out
    }

    /// Optimal solution and residual `‖A x* - b‖` without forming `A`.
    pub fn exact_solve(&self, factors: &[Matrix], modes: &[usize]) -> Result<(Vec<f64>, f64)> {
        let g = modes_gram(factors, modes)?;
        let x = pinv_psd(&g)?.matvec(&self.project(factors, modes));
        let res = self.residual(factors, modes, &x)?;
        Ok((x, res))
    }

    /// `‖A x - b‖ = sqrt(‖b‖² - 2 x^T A^T b + x^T A^T A x)`.
    pub fn residual(&self, factors: &[Matrix], modes: &[usize], x: &[f64]) -> Result<f64> {
        let g = modes_gram(factors, modes)?;
        let atb = self.project(factors, modes);
        let cross: f64 = x.iter().zip(&atb).map(|(a, b)| a * b).sum();
        let sq = self.norm_sq(modes) - 2.0 * cross + quad_form(&g, x);
        Ok(sq.max(0.0).sqrt())
    }
}

fn modes_gram(factors: &[Matrix], modes: &[usize]) -> Result<Matrix> {
    let r = factors[0].cols();
    let grams: Vec<Matrix> = modes.iter().map(|&k| gram(&factors[k])).collect();
    hadamard_chain(&grams.iter().collect::<Vec<_>>(), r, r)
}

/// `count` Gaussian `rows x rank` factors. A `spike_fraction` of the entries
/// of each factor, chosen without replacement, are multiplied by 10.
pub fn spiked_gaussian_factors<G: Rng + ?Sized>(
    count: usize,
    rows: usize,
    rank: usize,
    spike_fraction: f64,
    rng: &mut G,
) -> Vec<Matrix> {
    (0..count)
        .map(|_| {
            let mut data: Vec<f64> = (0..rows * rank).map(|_| rng.sample(StandardNormal)).collect();
            let spikes = ((spike_fraction * data.len() as f64).round() as usize).min(data.len());
            for i in sample_indices(rng, data.len(), spikes) {
                data[i] *= 10.0;
            }
            Matrix::from_vec(rows, rank, data).expect("finite gaussian entries")
        })
        .collect()
}
