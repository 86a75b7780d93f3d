//! Segment tree of partial Gram matrices for drawing rows of `U` from
//!
//! ```text
//! q[i] = <h h^T, U[i,:]^T U[i,:], Y> / <h h^T, U^T U, Y>
//! ```
//!
//! for a fixed PSD weight `Y` and a history vector `h` that may change on
//! every draw. Each node stores the Gram matrix of the rows in its segment, so
//! a branch decision is one `O(R^2)` contraction and a draw costs
//! `O(R^2 log(I/F))` plus a scan of at most `F` rows at the leaf.
//!
//! The tree is a complete binary tree in heap order (`0` is the root, node
//! `n` has children `2n+1` and `2n+2`). Leaves are assigned contiguous row
//! segments in left-to-right order.

use rand::Rng;
use rayon::prelude::*;

use crate::dense::{dot, eigh_psd, Matrix};
use crate::error::{Error, Result};

const NO_SLOT: usize = usize::MAX;

/// The PSD matrix `Y` parameterizing the distribution.
#[derive(Clone, Debug)]
pub enum PsdWeight {
    /// `Y = u u^T`; leaf scans reduce to one dot product per row.
    RankOne(Vec<f64>),
    General(Matrix),
}

impl PsdWeight {
    pub fn ones(r: usize) -> Self {
        PsdWeight::RankOne(vec![1.0; r])
    }

    fn dim(&self) -> usize {
        match self {
            PsdWeight::RankOne(u) => u.len(),
            PsdWeight::General(y) => y.rows(),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        match self {
            PsdWeight::RankOne(u) => Matrix::from_fn(u.len(), u.len(), |i, j| u[i] * u[j]),
            PsdWeight::General(y) => y.clone(),
        }
    }
}

/// Which partial Gram matrices are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GramLayout {
    /// Root and left children only, upper triangles. Draws only ever read
    /// left children.
    #[default]
    Compact,
    /// Every node. Used to audit the tree against a rebuild.
    Full,
}

/// Sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, which must be sorted
    /// row-major with no repeated coordinates.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty sparse matrix {rows}x{cols}")));
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets {
            if r >= rows {
                return Err(Error::OutOfRange { index: r, bound: rows });
            }
            if c >= cols {
                return Err(Error::OutOfRange { index: c, bound: cols });
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite sparse value".into()));
            }
            if let Some(p) = prev {
                if (r, c) <= p {
                    return Err(Error::InvalidInput(
                        "sparse entries must be sorted row-major without duplicates".into(),
                    ));
                }
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &triplets).expect("dense matrix is well formed")
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (c, v) in self.row_entries(i) {
                m[(i, c)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        self.row_entries(r)
            .find(|&(j, _)| j == c)
            .map_or(0.0, |(_, v)| v)
    }

    fn set(&mut self, r: usize, c: usize, value: f64) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(pos) => self.values[range.start + pos] = value,
            Err(pos) => {
                if value == 0.0 {
                    return;
                }
                let at = range.start + pos;
                self.col_idx.insert(at, c);
                self.values.insert(at, value);
                for p in &mut self.row_ptr[r + 1..] {
                    *p += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum RowStore {
    Dense(Matrix),
    Sparse(CsrMatrix),
}

impl RowStore {
    fn rows(&self) -> usize {
        match self {
            RowStore::Dense(m) => m.rows(),
            RowStore::Sparse(s) => s.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            RowStore::Dense(m) => m.cols(),
            RowStore::Sparse(s) => s.cols(),
        }
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            RowStore::Dense(m) => dot(m.row(i), x),
            RowStore::Sparse(s) => s.row_entries(i).map(|(c, v)| v * x[c]).sum(),
        }
    }

    /// `row^T M row` for a dense symmetric `M`.
    fn row_quad(&self, i: usize, m: &Matrix) -> f64 {
        match self {
            RowStore::Dense(u) => {
                let x = u.row(i);
                let mut s = 0.0;
                for (a, &xa) in x.iter().enumerate() {
                    if xa != 0.0 {
                        s += xa * dot(m.row(a), x);
                    }
                }
                s
            }
            RowStore::Sparse(sp) => {
                let mut s = 0.0;
                for (a, xa) in sp.row_entries(i) {
                    for (b, xb) in sp.row_entries(i) {
                        s += xa * xb * m[(a, b)];
                    }
                }
                s
            }
        }
    }

    fn add_row_outer(&self, i: usize, r: usize, packed: &mut [f64]) {
        match self {
            RowStore::Dense(u) => {
                let x = u.row(i);
                for a in 0..r {
                    let xa = x[a];
                    if xa == 0.0 {
                        continue;
                    }
                    let off = packed_offset(r, a);
                    for b in a..r {
                        packed[off + b - a] += xa * x[b];
                    }
                }
            }
            RowStore::Sparse(s) => {
                let start = s.row_ptr[i];
                let end = s.row_ptr[i + 1];
                for p in start..end {
                    let (a, xa) = (s.col_idx[p], s.values[p]);
                    let off = packed_offset(r, a);
                    for q in p..end {
                        let (b, xb) = (s.col_idx[q], s.values[q]);
                        packed[off + b - a] += xa * xb;
                    }
                }
            }
        }
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        match self {
            RowStore::Dense(m) => m[(r, c)],
            RowStore::Sparse(s) => s.get(r, c),
        }
    }

    fn dense_row(&self, r: usize) -> Vec<f64> {
        match self {
            RowStore::Dense(m) => m.row(r).to_vec(),
            RowStore::Sparse(s) => {
                let mut out = vec![0.0; s.cols()];
                for (c, v) in s.row_entries(r) {
                    out[c] = v;
                }
                out
            }
        }
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        match self {
            RowStore::Dense(m) => m[(r, c)] = v,
            RowStore::Sparse(s) => s.set(r, c, v),
        }
    }
}

#[inline]
fn packed_len(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Start of row `a` of a packed upper triangle.
#[inline]
fn packed_offset(r: usize, a: usize) -> usize {
    a * r - a * a.saturating_sub(1) / 2
}

fn unpack(r: usize, packed: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(r, r);
    for a in 0..r {
        let off = packed_offset(r, a);
        for b in a..r {
            m[(a, b)] = packed[off + b - a];
            m[(b, a)] = packed[off + b - a];
        }
    }
    m
}

/// Sampler over the rows of one matrix.
#[derive(Clone, Debug)]
pub struct SegmentTreeSampler {
    rows: RowStore,
    weight: PsdWeight,
    leaf_capacity: Option<usize>,
    layout: GramLayout,
    leaf_count: usize,
    /// `(start, end)` row range per node, end exclusive.
    segments: Vec<(usize, usize)>,
    slots: Vec<usize>,
    grams: Vec<f64>,
}

impl SegmentTreeSampler {
    /// Builds a sampler whose leaves hold at most `leaf_capacity` rows.
    pub fn build(u: &Matrix, leaf_capacity: usize, weight: PsdWeight) -> Result<Self> {
        Self::build_with_layout(u, leaf_capacity, weight, GramLayout::Compact)
    }

    pub fn build_with_layout(
        u: &Matrix,
        leaf_capacity: usize,
        weight: PsdWeight,
        layout: GramLayout,
    ) -> Result<Self> {
        if leaf_capacity == 0 {
            return Err(Error::InvalidInput("leaf capacity must be positive".into()));
        }
        if u.rows() == 0 || u.cols() == 0 {
            return Err(Error::Shape("cannot build a sampler on an empty matrix".into()));
        }
        if !u.is_finite() {
            return Err(Error::InvalidInput("sampler input has non-finite entries".into()));
        }
        validate_weight(&weight, u.cols())?;
        let i = u.rows();
        let leaf_count = i.div_ceil(leaf_capacity);
        let mut leaf_sizes = vec![leaf_capacity; leaf_count];
        leaf_sizes[leaf_count - 1] = i - leaf_capacity * (leaf_count - 1);
        let mut s = Self::empty(RowStore::Dense(u.clone()), weight, layout, &leaf_sizes);
        s.leaf_capacity = Some(leaf_capacity);
        s.fill_grams();
        Ok(s)
    }

    /// Builds from a sparse matrix with `Y` all ones. Leaves are cut so that
    /// each holds at most `R^2` nonzeros.
    pub fn build_sparse(u: &CsrMatrix) -> Result<Self> {
        Self::build_sparse_with_layout(u, GramLayout::Compact)
    }

    pub fn build_sparse_with_layout(u: &CsrMatrix, layout: GramLayout) -> Result<Self> {
        if u.nnz() == 0 {
            return Err(Error::InvalidInput("sparse sampler input has no nonzeros".into()));
        }
        let r = u.cols();
        let cap = r * r;
        let mut leaf_sizes = Vec::new();
        let (mut rows_in_leaf, mut nnz_in_leaf) = (0usize, 0usize);
        for i in 0..u.rows() {
            let k = u.row_nnz(i);
            if nnz_in_leaf > 0 && nnz_in_leaf + k > cap {
                leaf_sizes.push(rows_in_leaf);
                rows_in_leaf = 0;
                nnz_in_leaf = 0;
            }
            rows_in_leaf += 1;
            nnz_in_leaf += k;
        }
        leaf_sizes.push(rows_in_leaf);
        let mut s = Self::empty(RowStore::Sparse(u.clone()), PsdWeight::ones(r), layout, &leaf_sizes);
        s.fill_grams();
        Ok(s)
    }

    fn empty(rows: RowStore, weight: PsdWeight, layout: GramLayout, leaf_sizes: &[usize]) -> Self {
        let leaf_count = leaf_sizes.len();
        let node_count = 2 * leaf_count - 1;
        let mut segments = vec![(0, 0); node_count];
        // in-order walk assigns consecutive segments to leaves
        let mut next_leaf = 0;
        let mut cursor = 0;
        assign_segments(0, leaf_count, leaf_sizes, &mut next_leaf, &mut cursor, &mut segments);

        let mut slots = vec![NO_SLOT; node_count];
        let mut stored = 0;
        for (n, slot) in slots.iter_mut().enumerate() {
            let keep = match layout {
                GramLayout::Full => true,
                GramLayout::Compact => n == 0 || n % 2 == 1,
            };
            if keep {
                *slot = stored;
                stored += 1;
            }
        }
        let r = rows.cols();
        SegmentTreeSampler {
            rows,
            weight,
            leaf_capacity: None,
            layout,
            leaf_count,
            segments,
            slots,
            grams: vec![0.0; stored * packed_len(r)],
        }
    }

    fn fill_grams(&mut self) {
        let r = self.rank();
        let plen = packed_len(r);
        let node_count = self.segments.len();
        let first_leaf = self.leaf_count - 1;
        let mut all = vec![0.0; node_count * plen];

        let rows = &self.rows;
        let segments = &self.segments;
        all[first_leaf * plen..]
            .par_chunks_mut(plen)
            .enumerate()
            .for_each(|(k, g)| {
                let (start, end) = segments[first_leaf + k];
                for i in start..end {
                    rows.add_row_outer(i, r, g);
                }
            });
        for n in (0..first_leaf).rev() {
            let (head, tail) = all.split_at_mut((2 * n + 1) * plen);
            let left = &tail[..plen];
            let right = &tail[plen..2 * plen];
            let g = &mut head[n * plen..(n + 1) * plen];
            for ((x, a), b) in g.iter_mut().zip(left).zip(right) {
                *x = a + b;
            }
        }
        for n in 0..node_count {
            let slot = self.slots[n];
            if slot != NO_SLOT {
                self.grams[slot * plen..(slot + 1) * plen]
                    .copy_from_slice(&all[n * plen..(n + 1) * plen]);
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows.rows()
    }

    /// Column count `R`.
    pub fn rank(&self) -> usize {
        self.rows.cols()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn node_count(&self) -> usize {
        self.segments.len()
    }

    pub fn leaf_capacity(&self) -> Option<usize> {
        self.leaf_capacity
    }

    pub fn layout(&self) -> GramLayout {
        self.layout
    }

    pub fn weight(&self) -> &PsdWeight {
        &self.weight
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node + 1 >= self.leaf_count
    }

    /// Half-open row range of a node.
    pub fn segment(&self, node: usize) -> (usize, usize) {
        self.segments[node]
    }

    /// Leaf nodes in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut leaves: Vec<usize> = (self.leaf_count - 1..self.segments.len()).collect();
        leaves.sort_by_key(|&n| self.segments[n].0);
        leaves
    }

    /// Number of partial Gram matrices held.
    pub fn stored_gram_count(&self) -> usize {
        self.grams.len() / packed_len(self.rank())
    }

    fn packed_gram(&self, node: usize) -> Option<&[f64]> {
        let slot = self.slots[node];
        if slot == NO_SLOT {
            return None;
        }
        let plen = packed_len(self.rank());
        Some(&self.grams[slot * plen..(slot + 1) * plen])
    }

    /// Partial Gram matrix of a node, if this layout stores it.
    pub fn partial_gram(&self, node: usize) -> Option<Matrix> {
        self.packed_gram(node).map(|p| unpack(self.rank(), p))
    }

    /// Copy of the sampled matrix.
    pub fn matrix(&self) -> Matrix {
        match &self.rows {
            RowStore::Dense(m) => m.clone(),
            RowStore::Sparse(s) => s.to_dense(),
        }
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.rows.get(r, c)
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.rows.dense_row(r)
    }

    /// `<row r, x>`.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        self.rows.row_dot(r, x)
    }

    /// `h ⊛= row r`.
    pub fn scale_by_row(&self, r: usize, h: &mut [f64]) {
        match &self.rows {
            RowStore::Dense(m) => h.iter_mut().zip(m.row(r)).for_each(|(a, b)| *a *= b),
            RowStore::Sparse(s) => {
                let mut next = vec![0.0; h.len()];
                for (c, v) in s.row_entries(r) {
                    next[c] = h[c] * v;
                }
                h.copy_from_slice(&next);
            }
        }
    }

    fn contraction(&self, h: &[f64]) -> Contraction {
        let r = self.rank();
        let mut packed = vec![0.0; packed_len(r)];
        let full = match &self.weight {
            PsdWeight::RankOne(u) => {
                let hu: Vec<f64> = h.iter().zip(u).map(|(a, b)| a * b).collect();
                for a in 0..r {
                    let off = packed_offset(r, a);
                    packed[off] = hu[a] * hu[a];
                    for b in (a + 1)..r {
                        packed[off + b - a] = 2.0 * hu[a] * hu[b];
                    }
                }
                LeafKernel::RankOne(hu)
            }
            PsdWeight::General(y) => {
                let m = Matrix::from_fn(r, r, |a, b| h[a] * h[b] * y[(a, b)]);
                for a in 0..r {
                    let off = packed_offset(r, a);
                    packed[off] = m[(a, a)];
                    for b in (a + 1)..r {
                        packed[off + b - a] = 2.0 * m[(a, b)];
                    }
                }
                LeafKernel::General(m)
            }
        };
        Contraction { packed, leaf: full }
    }

    /// Normalization constant `<h h^T, U^T U, Y>` for a history vector.
    pub fn normalizer(&self, h: &[f64]) -> f64 {
        let c = self.contraction(h);
        dot(&c.packed, self.packed_gram(0).expect("root is always stored"))
    }

    fn checked_normalizer(&self, h: &[f64], c: &Contraction) -> Result<f64> {
        if h.len() != self.rank() {
            return Err(Error::Shape(format!(
                "history vector of length {} for rank {}",
                h.len(),
                self.rank()
            )));
        }
        let total = dot(&c.packed, self.packed_gram(0).expect("root is always stored"));
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::DegenerateDistribution(total));
        }
        Ok(total)
    }

    /// Unnormalized probability of a single row.
    fn row_weight(&self, i: usize, c: &Contraction) -> f64 {
        match &c.leaf {
            LeafKernel::RankOne(hu) => {
                let t = self.rows.row_dot(i, hu);
                t * t
            }
            LeafKernel::General(m) => self.rows.row_quad(i, m),
        }
    }

    /// Draws one row index. Consumes exactly one uniform variate.
    pub fn row_sample<G: Rng + ?Sized>(&self, h: &[f64], rng: &mut G) -> Result<usize> {
        let c = self.contraction(h);
        let total = self.checked_normalizer(h, &c)?;
        let d: f64 = rng.random();
        Ok(self.locate(d, total, &c))
    }

    /// Inverse-CDF lookup of `d` in `[0, 1)`.
    fn locate(&self, d: f64, total: f64, c: &Contraction) -> usize {
        let mut node = 0;
        let mut low = 0.0;
        while !self.is_leaf(node) {
            let left = 2 * node + 1;
            let mass = dot(&c.packed, self.packed_gram(left).expect("left children are stored")) / total;
            let cutoff = low + mass;
            if cutoff >= d && mass > 0.0 {
                node = left;
            } else {
                node = left + 1;
                low = cutoff;
            }
        }
        let (start, end) = self.segments[node];
        let mut cum = low;
        let mut last_positive = None;
        for i in start..end {
            let p = self.row_weight(i, c) / total;
            if p > 0.0 {
                cum += p;
                if cum >= d {
                    return i;
                }
                last_positive = Some(i);
            }
        }
        if let Some(i) = last_positive {
            return i;
        }
        // rounding sent the walk into a zero-mass leaf
        (0..start)
            .rev()
            .find(|&i| self.row_weight(i, c) > 0.0)
            .or_else(|| (end..self.rows()).find(|&i| self.row_weight(i, c) > 0.0))
            .unwrap_or(start)
    }

    /// Normalized probabilities of the rows held by `leaf`.
    pub fn leaf_probabilities(&self, h: &[f64], leaf: usize) -> Result<Vec<f64>> {
        if !self.is_leaf(leaf) || leaf >= self.segments.len() {
            return Err(Error::InvalidInput(format!("node {leaf} is not a leaf")));
        }
        let c = self.contraction(h);
        let total = self.checked_normalizer(h, &c)?;
        let (start, end) = self.segments[leaf];
        Ok((start..end).map(|i| self.row_weight(i, &c) / total).collect())
    }

    /// Same as [`leaf_probabilities`](Self::leaf_probabilities) but always
    /// through the dense `W (h h^T * Y) W^T` kernel.
    pub fn leaf_probabilities_general(&self, h: &[f64], leaf: usize) -> Result<Vec<f64>> {
        let y = self.weight.to_matrix();
        let r = self.rank();
        let m = Matrix::from_fn(r, r, |a, b| h[a] * h[b] * y[(a, b)]);
        let c = self.contraction(h);
        let total = self.checked_normalizer(h, &c)?;
        let (start, end) = self.segments[leaf];
        Ok((start..end).map(|i| self.rows.row_quad(i, &m) / total).collect())
    }

    /// Branch threshold `<h h^T, G^v, Y> / C` for a stored node.
    pub fn node_mass(&self, h: &[f64], node: usize) -> Result<Option<f64>> {
        let c = self.contraction(h);
        let total = self.checked_normalizer(h, &c)?;
        Ok(self.packed_gram(node).map(|g| dot(&c.packed, g) / total))
    }

    /// Probability the sampler assigns to every row, derived from the same
    /// thresholds the draw walks through (no sampling noise).
    pub fn assigned_probabilities(&self, h: &[f64]) -> Result<Vec<f64>> {
        let c = self.contraction(h);
        let total = self.checked_normalizer(h, &c)?;
        let mut out = vec![0.0; self.rows()];
        self.assign(0, 0.0, 1.0, total, &c, &mut out);
        Ok(out)
    }

    fn assign(&self, node: usize, low: f64, high: f64, total: f64, c: &Contraction, out: &mut [f64]) {
        if self.is_leaf(node) {
            let (start, end) = self.segments[node];
            let mut cum = low;
            let mut last = None;
            for i in start..end {
                let p = self.row_weight(i, c) / total;
                if p > 0.0 {
                    let lo = cum.min(high);
                    cum += p;
                    out[i] = cum.min(high) - lo;
                    last = Some(i);
                }
            }
            if let (Some(i), true) = (last, cum < high) {
                out[i] += high - cum;
            }
            return;
        }
        let left = 2 * node + 1;
        let mass = dot(&c.packed, self.packed_gram(left).expect("left children are stored")) / total;
        let cutoff = low + mass;
        if mass > 0.0 {
            self.assign(left, low, cutoff.min(high), total, c, out);
        }
        if cutoff < high {
            self.assign(left + 1, cutoff, high, total, c, out);
        }
    }

    /// Sets `U[r, c] = value` and patches row/column `c` of the partial Gram
    /// matrices on the path from the containing leaf to the root.
    pub fn update_entry(&mut self, r: usize, c: usize, value: f64) -> Result<()> {
        let rank = self.rank();
        if r >= self.rows() {
            return Err(Error::OutOfRange { index: r, bound: self.rows() });
        }
        if c >= rank {
            return Err(Error::OutOfRange { index: c, bound: rank });
        }
        if !value.is_finite() {
            return Err(Error::InvalidInput("non-finite update".into()));
        }
        let old_row = self.rows.dense_row(r);
        let delta = value - old_row[c];
        if delta == 0.0 {
            return Ok(());
        }
        let plen = packed_len(rank);
        let mut node = 0;
        loop {
            let slot = self.slots[node];
            if slot != NO_SLOT {
                let g = &mut self.grams[slot * plen..(slot + 1) * plen];
                for (j, &x) in old_row.iter().enumerate() {
                    let idx = if j < c {
                        packed_offset(rank, j) + c - j
                    } else {
                        packed_offset(rank, c) + j - c
                    };
                    if j == c {
                        g[idx] += 2.0 * delta * x + delta * delta;
                    } else {
                        g[idx] += delta * x;
                    }
                }
            }
            if self.is_leaf(node) {
                break;
            }
            let left = 2 * node + 1;
            node = if r < self.segments[left].1 { left } else { left + 1 };
        }
        self.rows.set(r, c, value);
        Ok(())
    }
}

struct Contraction {
    /// Upper triangle of `h h^T * Y` with off-diagonals doubled.
    packed: Vec<f64>,
    leaf: LeafKernel,
}

enum LeafKernel {
    RankOne(Vec<f64>),
    General(Matrix),
}

fn validate_weight(weight: &PsdWeight, r: usize) -> Result<()> {
    if weight.dim() != r {
        return Err(Error::Shape(format!(
            "weight of dimension {} for {r} columns",
            weight.dim()
        )));
    }
    match weight {
        PsdWeight::RankOne(u) => {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite rank-one weight".into()));
            }
        }
        PsdWeight::General(y) => {
            if y.cols() != r {
                return Err(Error::Shape("weight matrix must be square".into()));
            }
            eigh_psd(y)?;
        }
    }
    Ok(())
}

/// Assigns row ranges to the subtree at `node` holding `leaves` leaves, in
/// left-to-right order. Returns nothing; fills `segments`.
fn assign_segments(
    node: usize,
    total_leaves: usize,
    leaf_sizes: &[usize],
    next_leaf: &mut usize,
    cursor: &mut usize,
    segments: &mut [(usize, usize)],
) {
    if node + 1 >= total_leaves {
        let start = *cursor;
        *cursor += leaf_sizes[*next_leaf];
        *next_leaf += 1;
        segments[node] = (start, *cursor);
        return;
    }
    assign_segments(2 * node + 1, total_leaves, leaf_sizes, next_leaf, cursor, segments);
    assign_segments(2 * node + 2, total_leaves, leaf_sizes, next_leaf, cursor, segments);
    segments[node] = (segments[2 * node + 1].0, segments[2 * node + 2].1);
}
