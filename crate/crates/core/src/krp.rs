//! Exact leverage-score sampling from a Khatri-Rao product `U_1 ⊙ ... ⊙ U_N`,
//! optionally with one factor left out.
//!
//! A draw picks one row index per factor in ascending factor order. For
//! factor `k` the conditional distribution given the earlier picks is
//! `q_{h, U_k, G_{>k}}` with `h` the entrywise product of the rows already
//! chosen and `G_{>k} = G^+ ⊛ (⊛_{i>k} G_i)`. It is drawn in two stages:
//! an eigencomponent `u` of `G_{>k}` from a small tree over `sqrt(Λ) V^T`
//! weighted by `G_k`, then a row of `U_k` from the factor's own tree with
//! history `h ⊛ V[:, u]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dense::{eigh_psd, gram, hadamard_chain, pinv_from_eigen, EigenPair, Matrix};
use crate::error::{Error, Result};
use crate::segtree::{CsrMatrix, PsdWeight, SegmentTreeSampler};

/// Linearization of a multi-index into a Khatri-Rao row number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowOrder {
    /// `U_a ⊙ U_b ⊙ ...` in ascending factor order: the first factor's index
    /// varies slowest.
    FirstSlowest,
    /// `... ⊙ U_b ⊙ U_a`, the reversed product used by matricization: the
    /// first factor's index varies fastest.
    FirstFastest,
}

/// Flat row number of a multi-index.
pub fn linearize(index: &[usize], dims: &[usize], order: RowOrder) -> usize {
    debug_assert_eq!(index.len(), dims.len());
    match order {
        RowOrder::FirstSlowest => index.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i),
        RowOrder::FirstFastest => index
            .iter()
            .zip(dims)
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i),
    }
}

/// Inverse of [`linearize`].
pub fn delinearize(mut flat: usize, dims: &[usize], order: RowOrder) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    let positions: Vec<usize> = match order {
        RowOrder::FirstSlowest => (0..dims.len()).rev().collect(),
        RowOrder::FirstFastest => (0..dims.len()).collect(),
    };
    for p in positions {
        out[p] = flat % dims[p];
        flat /= dims[p];
    }
    out
}

/// `J` draws from the leverage distribution of a Khatri-Rao product.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub excluded: Option<usize>,
    /// Factors the multi-indices range over, ascending.
    pub modes: Vec<usize>,
    /// Row counts of those factors.
    pub dims: Vec<usize>,
    indices: Vec<usize>,
    /// Probability of each drawn row under the sampling distribution.
    pub probabilities: Vec<f64>,
    /// The drawn Khatri-Rao rows, `J x R`.
    pub rows: Matrix,
}

impl SampleBatch {
    pub fn count(&self) -> usize {
        self.probabilities.len()
    }

    /// Row indices (one per entry of `modes`) of draw `d`.
    pub fn multi_index(&self, d: usize) -> &[usize] {
        let n = self.modes.len();
        &self.indices[d * n..(d + 1) * n]
    }

    pub fn multi_indices(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.modes.len())
    }

    pub fn flat_index(&self, d: usize, order: RowOrder) -> usize {
        linearize(self.multi_index(d), &self.dims, order)
    }

    pub fn flat_indices(&self, order: RowOrder) -> Vec<usize> {
        (0..self.count()).map(|d| self.flat_index(d, order)).collect()
    }

    pub(crate) fn from_parts(
        excluded: Option<usize>,
        modes: Vec<usize>,
        dims: Vec<usize>,
        indices: Vec<usize>,
        probabilities: Vec<f64>,
        rows: Matrix,
    ) -> Self {
        SampleBatch {
            excluded,
            modes,
            dims,
            indices,
            probabilities,
            rows,
        }
    }
}

/// Per-factor scratch for one sampling pass: `G_{>k}`, its eigenpairs and
/// the eigencomponent sampler.
#[derive(Clone, Debug)]
pub struct ExclusionScratch {
    pub factor: usize,
    pub g_greater: Matrix,
    pub eigen: EigenPair,
    pub component_sampler: SegmentTreeSampler,
}

/// Mixture form of a conditional distribution: `q = Σ_u w[u] W[:,u] / |W[:,u]|_1`.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub weights: Vec<f64>,
    /// `I_k x R`, column `u` holds `W[:, u]` (unnormalized).
    pub components: Matrix,
}

impl Mixture {
    pub fn distribution(&self) -> Vec<f64> {
        let (rows, r) = self.components.shape();
        let norms: Vec<f64> = (0..r)
            .map(|u| (0..rows).map(|t| self.components[(t, u)]).sum())
            .collect();
        (0..rows)
            .map(|t| {
                (0..r)
                    .filter(|&u| self.weights[u] > 0.0 && norms[u] > 0.0)
                    .map(|u| self.weights[u] * self.components[(t, u)] / norms[u])
                    .sum()
            })
            .collect()
    }
}

/// Leverage-score sampler over `U_1 ⊙ ... ⊙ U_N`.
#[derive(Clone, Debug)]
pub struct KrpSampler {
    trees: Vec<SegmentTreeSampler>,
    grams: Vec<Matrix>,
}

impl KrpSampler {
    /// Builds one row tree (`F = R`, `Y` all ones) and one Gram matrix per
    /// factor.
    pub fn new(factors: &[Matrix]) -> Result<Self> {
        let r = check_factor_shapes(factors.iter().map(|f| f.cols()))?;
        let trees = factors
            .iter()
            .map(|u| SegmentTreeSampler::build(u, r, PsdWeight::ones(r)))
            .collect::<Result<Vec<_>>>()?;
        let grams = factors.iter().map(gram).collect();
        let s = KrpSampler { trees, grams };
        s.check_nonzero(None)?;
        Ok(s)
    }

    /// Same as [`new`](Self::new) for sparse factors.
    pub fn new_sparse(factors: &[CsrMatrix]) -> Result<Self> {
        check_factor_shapes(factors.iter().map(|f| f.cols()))?;
        let trees = factors
            .iter()
            .map(SegmentTreeSampler::build_sparse)
            .collect::<Result<Vec<_>>>()?;
        let grams = factors.iter().map(|f| gram(&f.to_dense())).collect();
        let s = KrpSampler { trees, grams };
        s.check_nonzero(None)?;
        Ok(s)
    }

    pub fn factor_count(&self) -> usize {
        self.trees.len()
    }

    pub fn rank(&self) -> usize {
        self.grams[0].rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.rows()).collect()
    }

    pub fn gram(&self, j: usize) -> &Matrix {
        &self.grams[j]
    }

    pub fn tree(&self, j: usize) -> &SegmentTreeSampler {
        &self.trees[j]
    }

    pub fn factor(&self, j: usize) -> Matrix {
        self.trees[j].matrix()
    }

    /// Factors other than `excluded`, ascending.
    pub fn modes(&self, excluded: Option<usize>) -> Vec<usize> {
        (0..self.factor_count()).filter(|&k| Some(k) != excluded).collect()
    }

    fn check_excluded(&self, excluded: Option<usize>) -> Result<()> {
        if let Some(j) = excluded {
            if j >= self.factor_count() {
                return Err(Error::OutOfRange {
                    index: j,
                    bound: self.factor_count(),
                });
            }
            if self.factor_count() == 1 {
                return Err(Error::InvalidInput("cannot exclude the only factor".into()));
            }
        }
        Ok(())
    }

    fn check_nonzero(&self, excluded: Option<usize>) -> Result<()> {
        let g = self.product_gram(excluded)?;
        if (0..g.rows()).all(|i| g[(i, i)] == 0.0) {
            return Err(Error::InvalidInput("Khatri-Rao product is zero".into()));
        }
        Ok(())
    }

    /// `A^T A = ⊛_{k≠j} G_k` for the product without `excluded`.
    pub fn product_gram(&self, excluded: Option<usize>) -> Result<Matrix> {
        let r = self.rank();
        let mats: Vec<&Matrix> = self.modes(excluded).into_iter().map(|k| &self.grams[k]).collect();
        hadamard_chain(&mats, r, r)
    }

    /// Eigendecomposition and pseudoinverse of `A^T A`.
    fn product_pinv(&self, excluded: Option<usize>) -> Result<(EigenPair, Matrix)> {
        let eig = eigh_psd(&self.product_gram(excluded)?)?;
        let pinv = pinv_from_eigen(&eig);
        Ok((eig, pinv))
    }

    fn scratch_with(&self, excluded: Option<usize>, k: usize, g_pinv: &Matrix) -> Result<ExclusionScratch> {
        let r = self.rank();
        let later: Vec<&Matrix> = (k + 1..self.factor_count())
            .filter(|&i| Some(i) != excluded)
            .map(|i| &self.grams[i])
            .collect();
        let g_greater = g_pinv.hadamard(&hadamard_chain(&later, r, r)?)?;
        let eigen = eigh_psd(&g_greater)?;
        let scaled = Matrix::from_fn(r, r, |u, a| eigen.values[u].sqrt() * eigen.vectors[(a, u)]);
        let component_sampler =
            SegmentTreeSampler::build(&scaled, 1, PsdWeight::General(self.grams[k].clone()))?;
        Ok(ExclusionScratch {
            factor: k,
            g_greater,
            eigen,
            component_sampler,
        })
    }

    /// Scratch for factor `k` of the product without `excluded`.
    pub fn scratch(&self, excluded: Option<usize>, k: usize) -> Result<ExclusionScratch> {
        self.check_excluded(excluded)?;
        if k >= self.factor_count() || Some(k) == excluded {
            return Err(Error::InvalidInput(format!("factor {k} is not sampled")));
        }
        let (_, pinv) = self.product_pinv(excluded)?;
        self.scratch_with(excluded, k, &pinv)
    }

    /// Draws `count` i.i.d. multi-indices from the leverage distribution of
    /// the product without `excluded`.
    ///
    /// One seed is taken from `rng`; draw `d` then runs on its own ChaCha
    /// stream, so the output does not depend on thread scheduling.
    pub fn sample<G: Rng + ?Sized>(&self, excluded: Option<usize>, count: usize, rng: &mut G) -> Result<SampleBatch> {
        self.sample_seeded(excluded, count, rng.next_u64())
    }

    pub fn sample_seeded(&self, excluded: Option<usize>, count: usize, seed: u64) -> Result<SampleBatch> {
        self.check_excluded(excluded)?;
        if count == 0 {
            return Err(Error::InvalidInput("sample count must be positive".into()));
        }
        let r = self.rank();
        let modes = self.modes(excluded);
        let n = modes.len();
        let (eig, pinv) = self.product_pinv(excluded)?;
        if eig.rank() == 0 {
            return Err(Error::DegenerateDistribution(0.0));
        }
        let total_leverage = eig.rank() as f64;

        let mut states: Vec<DrawState> = (0..count)
            .map(|d| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(d as u64);
                DrawState {
                    rng,
                    h: vec![1.0; r],
                    picks: Vec::with_capacity(n),
                }
            })
            .collect();

        // all J draws advance one factor at a time, so only one scratch lives
        for &k in &modes {
            let scratch = self.scratch_with(excluded, k, &pinv)?;
            let tree = &self.trees[k];
            states.par_iter_mut().try_for_each(|st| -> Result<()> {
                let u = scratch.component_sampler.row_sample(&st.h, &mut st.rng)?;
                let projected: Vec<f64> = st
                    .h
                    .iter()
                    .enumerate()
                    .map(|(a, &x)| x * scratch.eigen.vectors[(a, u)])
                    .collect();
                let t = tree.row_sample(&projected, &mut st.rng)?;
                tree.scale_by_row(t, &mut st.h);
                st.picks.push(t);
                Ok(())
            })?;
        }

        let mut indices = Vec::with_capacity(count * n);
        let mut rows = Matrix::zeros(count, r);
        let mut probabilities = Vec::with_capacity(count);
        for (d, st) in states.into_iter().enumerate() {
            let lev = quad_form(&pinv, &st.h);
            probabilities.push(lev / total_leverage);
            rows.row_mut(d).copy_from_slice(&st.h);
            indices.extend(st.picks);
        }
        let dims = modes.iter().map(|&k| self.trees[k].rows()).collect();
        Ok(SampleBatch::from_parts(excluded, modes, dims, indices, probabilities, rows))
    }

    /// Mixture decomposition of `p(t_k = . | h)`.
    pub fn mixture(&self, excluded: Option<usize>, k: usize, h: &[f64]) -> Result<Mixture> {
        let scratch = self.scratch(excluded, k)?;
        let r = self.rank();
        if h.len() != r {
            return Err(Error::Shape(format!("history of length {} for rank {r}", h.len())));
        }
        let tree = &self.trees[k];
        let rows = tree.rows();
        let mut components = Matrix::zeros(rows, r);
        let mut col_sums = vec![0.0; r];
        for u in 0..r {
            let projected: Vec<f64> = (0..r).map(|a| h[a] * scratch.eigen.vectors[(a, u)]).collect();
            for t in 0..rows {
                let x = tree.row_dot(t, &projected);
                components[(t, u)] = x * x;
                col_sums[u] += x * x;
            }
        }
        let raw: Vec<f64> = (0..r).map(|u| scratch.eigen.values[u] * col_sums[u]).collect();
        let c: f64 = raw.iter().sum();
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::DegenerateDistribution(c));
        }
        Ok(Mixture {
            weights: raw.iter().map(|w| w / c).collect(),
            components,
        })
    }

    /// Exact `p(t_k = . | h)` marginalized over the eigencomponent draw.
    pub fn conditional_distribution(&self, excluded: Option<usize>, k: usize, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mixture(excluded, k, h)?.distribution())
    }

    /// Leverage score of the Khatri-Rao row at a multi-index over
    /// `modes(excluded)`, with the total (the rank) for normalization.
    pub fn leverage(&self, excluded: Option<usize>, index: &[usize]) -> Result<(f64, f64)> {
        let modes = self.modes(excluded);
        if index.len() != modes.len() {
            return Err(Error::Shape("multi-index length mismatch".into()));
        }
        let mut h = vec![1.0; self.rank()];
        for (&k, &t) in modes.iter().zip(index) {
            if t >= self.trees[k].rows() {
                return Err(Error::OutOfRange { index: t, bound: self.trees[k].rows() });
            }
            self.trees[k].scale_by_row(t, &mut h);
        }
        let (eig, pinv) = self.product_pinv(excluded)?;
        Ok((quad_form(&pinv, &h), eig.rank() as f64))
    }

    /// Replaces factor `j`; only its tree and Gram are rebuilt.
    pub fn update_factor(&mut self, j: usize, u: &Matrix) -> Result<()> {
        if j >= self.factor_count() {
            return Err(Error::OutOfRange { index: j, bound: self.factor_count() });
        }
        if u.cols() != self.rank() {
            return Err(Error::Shape(format!("factor has {} columns, expected {}", u.cols(), self.rank())));
        }
        let r = self.rank();
        self.trees[j] = SegmentTreeSampler::build(u, r, PsdWeight::ones(r))?;
        self.grams[j] = gram(u);
        Ok(())
    }

    /// Sets `U_j[r, c] = value` in `O(R log I_j)`.
    pub fn update_factor_entry(&mut self, j: usize, r: usize, c: usize, value: f64) -> Result<()> {
        if j >= self.factor_count() {
            return Err(Error::OutOfRange { index: j, bound: self.factor_count() });
        }
        let tree = &mut self.trees[j];
        if r >= tree.rows() {
            return Err(Error::OutOfRange { index: r, bound: tree.rows() });
        }
        let old = tree.row(r);
        tree.update_entry(r, c, value)?;
        let delta = value - old[c];
        let g = &mut self.grams[j];
        for (b, &x) in old.iter().enumerate() {
            if b == c {
                g[(c, c)] += 2.0 * delta * x + delta * delta;
            } else {
                g[(c, b)] += delta * x;
                g[(b, c)] += delta * x;
            }
        }
        Ok(())
    }
}

struct DrawState {
    rng: ChaCha8Rng,
    h: Vec<f64>,
    picks: Vec<usize>,
}

fn check_factor_shapes(mut cols: impl Iterator<Item = usize>) -> Result<usize> {
    let r = cols
        .next()
        .ok_or_else(|| Error::InvalidInput("no factor matrices".into()))?;
    if cols.any(|c| c != r) {
        return Err(Error::Shape("factor matrices have different column counts".into()));
    }
    Ok(r)
}

pub(crate) fn quad_form(m: &Matrix, x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(a, &xa)| xa * crate::dense::dot(m.row(a), x))
        .sum()
}
