//! Tensor-train vectors and operators.
//!
//! A tensor with modes `n_1 x ... x n_K` is stored as a chain of order-3
//! cores `G_k` of shape `(r_{k-1}, n_k, r_k)` with boundary ranks 1; entry
//! `x[i_1,...,i_K]` is the product of the matrix slices `G_1[i_1] ... G_K[i_K]`.
//! Operators carry order-4 cores `(r_{k-1}, n_k, m_k, r_k)` acting row-mode
//! by row-mode. Storage is row-major throughout, matching the row-major
//! linear ordering of the grid, so the two natural matrix unfoldings of a
//! core are plain reinterpretations of its buffer.

mod amen;
mod cross;
mod dense;
mod io;
mod round;
mod svd;

pub use amen::{amen_solve, AmenOptions, SolveReport};
pub use cross::{tt_cross, CrossOptions};
pub use dense::{tt_from_dense, tt_matrix_to_dense, tt_to_dense, DenseTensor, DENSE_GUARD};
pub use io::{read_tt_matrix, read_tt_vector, write_tt_matrix, write_tt_vector};
pub use round::{tt_round, tt_round_matrix};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TtError {
    #[error("tensor train has no cores")]
    Empty,
    #[error("core {pos}: left rank {left} does not match previous right rank {right}")]
    RankMismatch { pos: usize, left: usize, right: usize },
    #[error("boundary ranks must be 1, got {left} and {right}")]
    BoundaryRank { left: usize, right: usize },
    #[error("core {pos}: buffer length {len} does not match shape {shape:?}")]
    CoreShape { pos: usize, len: usize, shape: (usize, usize, usize, usize) },
    #[error("mode sizes differ: {0:?} vs {1:?}")]
    ModeMismatch(Vec<usize>, Vec<usize>),
    #[error("dense tensor with {total} entries exceeds the {guard}-entry guard")]
    DenseTooLarge { total: usize, guard: usize },
    #[error("singular value decomposition failed to converge")]
    SvdFailed,
    #[error("function returned a non-finite value at index {0:?}")]
    NonFiniteValue(Vec<usize>),
    #[error("cross approximation verification error {error:e} exceeds {budget:e}")]
    CrossVerification { error: f64, budget: f64 },
    #[error("linear solve stalled: residual {residual:e} with rank cap {max_rank}")]
    SolveStalled { residual: f64, max_rank: usize },
    #[error("local system of size {0} is singular")]
    SingularLocalSystem(usize),
    #[error("dump format: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major matrix product `(m x k) * (k x n)`.
pub(crate) fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[l * n..(l + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

/// One order-3 TT core, shape `(r_left, n, r_right)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Core3 {
    pub r_left: usize,
    pub n: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl Core3 {
    pub fn zeros(r_left: usize, n: usize, r_right: usize) -> Self {
        Core3 { r_left, n, r_right, data: vec![0.0; r_left * n * r_right] }
    }

    #[inline]
    pub fn at(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.n + i) * self.r_right + b]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, i: usize, b: usize) -> &mut f64 {
        &mut self.data[(a * self.n + i) * self.r_right + b]
    }

    /// Matrix slice for a fixed mode index: `(r_left x r_right)`, row-major.
    pub fn slice(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.r_left * self.r_right];
        for a in 0..self.r_left {
            let src = (a * self.n + i) * self.r_right;
            out[a * self.r_right..(a + 1) * self.r_right]
                .copy_from_slice(&self.data[src..src + self.r_right]);
        }
        out
    }
}

/// Tensor-train vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TtVector {
    pub(crate) cores: Vec<Core3>,
}

impl TtVector {
    pub fn from_cores(cores: Vec<Core3>) -> Result<Self, TtError> {
        if cores.is_empty() {
            return Err(TtError::Empty);
        }
        let first = cores.first().unwrap().r_left;
        let last = cores.last().unwrap().r_right;
        if first != 1 || last != 1 {
            return Err(TtError::BoundaryRank { left: first, right: last });
        }
        for (pos, c) in cores.iter().enumerate() {
            if c.data.len() != c.r_left * c.n * c.r_right {
                return Err(TtError::CoreShape {
                    pos,
                    len: c.data.len(),
                    shape: (c.r_left, c.n, 1, c.r_right),
                });
            }
            if pos > 0 && cores[pos - 1].r_right != c.r_left {
                return Err(TtError::RankMismatch {
                    pos,
                    left: c.r_left,
                    right: cores[pos - 1].r_right,
                });
            }
        }
        Ok(TtVector { cores })
    }

    /// Rank-1 tensor from per-mode factor vectors.
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<Self, TtError> {
        if factors.is_empty() {
            return Err(TtError::Empty);
        }
        let cores = factors
            .iter()
            .map(|f| Core3 { r_left: 1, n: f.len(), r_right: 1, data: f.clone() })
            .collect();
        TtVector::from_cores(cores)
    }

    /// Constant tensor with the given value everywhere.
    pub fn constant(modes: &[usize], value: f64) -> Result<Self, TtError> {
        let mut factors: Vec<Vec<f64>> = modes.iter().map(|&n| vec![1.0; n]).collect();
        if let Some(f) = factors.first_mut() {
            f.iter_mut().for_each(|x| *x = value);
        }
        TtVector::rank_one(&factors)
    }

    pub fn ndims(&self) -> usize {
        self.cores.len()
    }

    pub fn modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Bond ranks including the unit boundaries: length `K + 1`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.r_left).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn core(&self, k: usize) -> &Core3 {
        &self.cores[k]
    }

    pub fn cores(&self) -> &[Core3] {
        &self.cores
    }

    /// Total number of represented entries (product of modes).
    pub fn total_len(&self) -> usize {
        self.cores.iter().map(|c| c.n).product()
    }

    /// Number of stored floats across all cores.
    pub fn storage_len(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Entry at a multi-index, O(K r^2).
    pub fn eval(&self, multi: &[usize]) -> f64 {
        debug_assert_eq!(multi.len(), self.cores.len());
        let mut v = vec![1.0];
        for (c, &i) in self.cores.iter().zip(multi) {
            let mut next = vec![0.0; c.r_right];
            for (a, &va) in v.iter().enumerate() {
                if va != 0.0 {
                    let row = (a * c.n + i) * c.r_right;
                    for b in 0..c.r_right {
                        next[b] += va * c.data[row + b];
                    }
                }
            }
            v = next;
        }
        v[0]
    }

    /// Inner product with another TT of the same modes.
    pub fn dot(&self, other: &TtVector) -> Result<f64, TtError> {
        if self.modes() != other.modes() {
            return Err(TtError::ModeMismatch(self.modes(), other.modes()));
        }
        // M starts as the 1x1 identity and is pushed through each mode:
        // M' = sum_i A_i^T M B_i.
        let mut m = vec![1.0];
        let mut ra = 1usize;
        let mut rb = 1usize;
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let mut next = vec![0.0; ca.r_right * cb.r_right];
            for i in 0..ca.n {
                // t = M * B_i  (ra x rb) * (rb x rb') using B_i slice rows
                let mut t = vec![0.0; ra * cb.r_right];
                for a in 0..ra {
                    for b in 0..rb {
                        let mv = m[a * rb + b];
                        if mv != 0.0 {
                            let brow = (b * cb.n + i) * cb.r_right;
                            for bp in 0..cb.r_right {
                                t[a * cb.r_right + bp] += mv * cb.data[brow + bp];
                            }
                        }
                    }
                }
                // next += A_i^T t  ((ra' x ra) * (ra x rb'))
                for a in 0..ra {
                    let arow = (a * ca.n + i) * ca.r_right;
                    for ap in 0..ca.r_right {
                        let av = ca.data[arow + ap];
                        if av != 0.0 {
                            for bp in 0..cb.r_right {
                                next[ap * cb.r_right + bp] += av * t[a * cb.r_right + bp];
                            }
                        }
                    }
                }
            }
            m = next;
            ra = ca.r_right;
            rb = cb.r_right;
        }
        Ok(m[0])
    }

    /// Frobenius norm, consistent with `dot` by construction.
    pub fn norm(&self) -> f64 {
        self.dot(self).map(|d| d.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// In-place scaling (absorbed into the first core).
    pub fn scale(&mut self, factor: f64) {
        for x in &mut self.cores[0].data {
            *x *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> TtVector {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// Structural sum: ranks add, no truncation.
    pub fn add(&self, other: &TtVector) -> Result<TtVector, TtError> {
        if self.modes() != other.modes() {
            return Err(TtError::ModeMismatch(self.modes(), other.modes()));
        }
        let k_last = self.cores.len() - 1;
        if k_last == 0 {
            // Single core: plain elementwise sum.
            let mut c = self.cores[0].clone();
            for (x, y) in c.data.iter_mut().zip(&other.cores[0].data) {
                *x += y;
            }
            return TtVector::from_cores(vec![c]);
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (k, (ca, cb)) in self.cores.iter().zip(&other.cores).enumerate() {
            let (rl_a, rl_b) = (ca.r_left, cb.r_left);
            let (rr_a, rr_b) = (ca.r_right, cb.r_right);
            let (rl, rr) = if k == 0 {
                (1, rr_a + rr_b)
            } else if k == k_last {
                (rl_a + rl_b, 1)
            } else {
                (rl_a + rl_b, rr_a + rr_b)
            };
            let mut c = Core3::zeros(rl, ca.n, rr);
            for i in 0..ca.n {
                for a in 0..rl_a {
                    for b in 0..rr_a {
                        *c.at_mut(a, i, b) = ca.at(a, i, b);
                    }
                }
                let (da, db) = (if k == 0 { 0 } else { rl_a }, if k == k_last { 0 } else { rr_a });
                for a in 0..rl_b {
                    for b in 0..rr_b {
                        *c.at_mut(da + a, i, db + b) = cb.at(a, i, b);
                    }
                }
            }
            cores.push(c);
        }
        TtVector::from_cores(cores)
    }

    /// Elementwise product: ranks multiply (Kronecker product per slice).
    pub fn hadamard(&self, other: &TtVector) -> Result<TtVector, TtError> {
        if self.modes() != other.modes() {
            return Err(TtError::ModeMismatch(self.modes(), other.modes()));
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let rl = ca.r_left * cb.r_left;
            let rr = ca.r_right * cb.r_right;
            let mut c = Core3::zeros(rl, ca.n, rr);
            for i in 0..ca.n {
                for a1 in 0..ca.r_left {
                    for b1 in 0..ca.r_right {
                        let av = ca.at(a1, i, b1);
                        if av == 0.0 {
                            continue;
                        }
                        for a2 in 0..cb.r_left {
                            let arow = a1 * cb.r_left + a2;
                            for b2 in 0..cb.r_right {
                                *c.at_mut(arow, i, b1 * cb.r_right + b2) =
                                    av * cb.at(a2, i, b2);
                            }
                        }
                    }
                }
            }
            cores.push(c);
        }
        TtVector::from_cores(cores)
    }

    /// Full contraction against per-mode weight vectors:
    /// `sum_{i_1..i_K} x[i] * w_1[i_1] * ... * w_K[i_K]`.
    pub fn weighted_sum(&self, weights: &[Vec<f64>]) -> Result<f64, TtError> {
        let modes = self.modes();
        let wmodes: Vec<usize> = weights.iter().map(|w| w.len()).collect();
        if modes != wmodes {
            return Err(TtError::ModeMismatch(modes, wmodes));
        }
        let mut v = vec![1.0];
        for (c, w) in self.cores.iter().zip(weights) {
            let mut next = vec![0.0; c.r_right];
            for (a, &va) in v.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                for (i, &wi) in w.iter().enumerate() {
                    if wi == 0.0 {
                        continue;
                    }
                    let row = (a * c.n + i) * c.r_right;
                    let f = va * wi;
                    for b in 0..c.r_right {
                        next[b] += f * c.data[row + b];
                    }
                }
            }
            v = next;
        }
        Ok(v[0])
    }
}

/// One order-4 operator core, shape `(r_left, n_out, n_in, r_right)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Core4 {
    pub r_left: usize,
    pub n_out: usize,
    pub n_in: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl Core4 {
    pub fn zeros(r_left: usize, n_out: usize, n_in: usize, r_right: usize) -> Self {
        Core4 { r_left, n_out, n_in, r_right, data: vec![0.0; r_left * n_out * n_in * r_right] }
    }

    #[inline]
    pub fn at(&self, a: usize, i: usize, j: usize, b: usize) -> f64 {
        self.data[((a * self.n_out + i) * self.n_in + j) * self.r_right + b]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, i: usize, j: usize, b: usize) -> &mut f64 {
        &mut self.data[((a * self.n_out + i) * self.n_in + j) * self.r_right + b]
    }
}

/// Tensor-train operator (matrix in TT format).
#[derive(Debug, Clone, PartialEq)]
pub struct TtMatrix {
    pub(crate) cores: Vec<Core4>,
}

impl TtMatrix {
    pub fn from_cores(cores: Vec<Core4>) -> Result<Self, TtError> {
        if cores.is_empty() {
            return Err(TtError::Empty);
        }
        let first = cores.first().unwrap().r_left;
        let last = cores.last().unwrap().r_right;
        if first != 1 || last != 1 {
            return Err(TtError::BoundaryRank { left: first, right: last });
        }
        for (pos, c) in cores.iter().enumerate() {
            if c.data.len() != c.r_left * c.n_out * c.n_in * c.r_right {
                return Err(TtError::CoreShape {
                    pos,
                    len: c.data.len(),
                    shape: (c.r_left, c.n_out, c.n_in, c.r_right),
                });
            }
            if pos > 0 && cores[pos - 1].r_right != c.r_left {
                return Err(TtError::RankMismatch {
                    pos,
                    left: c.r_left,
                    right: cores[pos - 1].r_right,
                });
            }
        }
        Ok(TtMatrix { cores })
    }

    /// Identity operator on the given mode sizes.
    pub fn identity(modes: &[usize]) -> Result<Self, TtError> {
        if modes.is_empty() {
            return Err(TtError::Empty);
        }
        let cores = modes
            .iter()
            .map(|&n| {
                let mut c = Core4::zeros(1, n, n, 1);
                for i in 0..n {
                    *c.at_mut(0, i, i, 0) = 1.0;
                }
                c
            })
            .collect();
        TtMatrix::from_cores(cores)
    }

    /// Rank-1 operator from per-mode square matrices (row-major buffers).
    pub fn rank_one(mats: &[(Vec<f64>, usize)]) -> Result<Self, TtError> {
        if mats.is_empty() {
            return Err(TtError::Empty);
        }
        let cores = mats
            .iter()
            .map(|(data, n)| Core4 { r_left: 1, n_out: *n, n_in: *n, r_right: 1, data: data.clone() })
            .collect();
        TtMatrix::from_cores(cores)
    }

    /// Diagonal operator carrying a TT vector on its diagonal; ranks are
    /// inherited unchanged.
    pub fn diagonal(v: &TtVector) -> TtMatrix {
        let cores = v
            .cores
            .iter()
            .map(|c| {
                let mut m = Core4::zeros(c.r_left, c.n, c.n, c.r_right);
                for a in 0..c.r_left {
                    for i in 0..c.n {
                        for b in 0..c.r_right {
                            *m.at_mut(a, i, i, b) = c.at(a, i, b);
                        }
                    }
                }
                m
            })
            .collect();
        TtMatrix { cores }
    }

    pub fn ndims(&self) -> usize {
        self.cores.len()
    }

    pub fn row_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n_out).collect()
    }

    pub fn col_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n_in).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.r_left).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn core(&self, k: usize) -> &Core4 {
        &self.cores[k]
    }

    /// Swap row and column modes.
    pub fn transpose(&self) -> TtMatrix {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let mut t = Core4::zeros(c.r_left, c.n_in, c.n_out, c.r_right);
                for a in 0..c.r_left {
                    for i in 0..c.n_out {
                        for j in 0..c.n_in {
                            for b in 0..c.r_right {
                                *t.at_mut(a, j, i, b) = c.at(a, i, j, b);
                            }
                        }
                    }
                }
                t
            })
            .collect();
        TtMatrix { cores }
    }

    pub fn scale(&mut self, factor: f64) {
        for x in &mut self.cores[0].data {
            *x *= factor;
        }
    }

    /// Frobenius norm, computed by treating the operator entries as one long
    /// vector (the row/column mode pair of each core fuses into one mode).
    pub fn frobenius_norm(&self) -> f64 {
        let fused: Vec<Core3> = self
            .cores
            .iter()
            .map(|c| Core3 {
                r_left: c.r_left,
                n: c.n_out * c.n_in,
                r_right: c.r_right,
                data: c.data.clone(),
            })
            .collect();
        TtVector { cores: fused }.norm()
    }

    pub fn scaled(&self, factor: f64) -> TtMatrix {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// Structural operator sum: ranks add.
    pub fn add(&self, other: &TtMatrix) -> Result<TtMatrix, TtError> {
        if self.row_modes() != other.row_modes() || self.col_modes() != other.col_modes() {
            return Err(TtError::ModeMismatch(self.row_modes(), other.row_modes()));
        }
        let k_last = self.cores.len() - 1;
        if k_last == 0 {
            let mut c = self.cores[0].clone();
            for (x, y) in c.data.iter_mut().zip(&other.cores[0].data) {
                *x += y;
            }
            return Ok(TtMatrix { cores: vec![c] });
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (k, (ca, cb)) in self.cores.iter().zip(&other.cores).enumerate() {
            let (rl, rr) = if k == 0 {
                (1, ca.r_right + cb.r_right)
            } else if k == k_last {
                (ca.r_left + cb.r_left, 1)
            } else {
                (ca.r_left + cb.r_left, ca.r_right + cb.r_right)
            };
            let mut c = Core4::zeros(rl, ca.n_out, ca.n_in, rr);
            let (da, db) =
                (if k == 0 { 0 } else { ca.r_left }, if k == k_last { 0 } else { ca.r_right });
            for i in 0..ca.n_out {
                for j in 0..ca.n_in {
                    for a in 0..ca.r_left {
                        for b in 0..ca.r_right {
                            *c.at_mut(a, i, j, b) = ca.at(a, i, j, b);
                        }
                    }
                    for a in 0..cb.r_left {
                        for b in 0..cb.r_right {
                            *c.at_mut(da + a, i, j, db + b) = cb.at(a, i, j, b);
                        }
                    }
                }
            }
            cores.push(c);
        }
        TtMatrix::from_cores(cores)
    }

    /// Operator-vector product; output ranks are products of the inputs'.
    pub fn matvec(&self, x: &TtVector) -> Result<TtVector, TtError> {
        if self.col_modes() != x.modes() {
            return Err(TtError::ModeMismatch(self.col_modes(), x.modes()));
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (ca, cx) in self.cores.iter().zip(&x.cores) {
            let rl = ca.r_left * cx.r_left;
            let rr = ca.r_right * cx.r_right;
            let mut c = Core3::zeros(rl, ca.n_out, rr);
            for i in 0..ca.n_out {
                for j in 0..ca.n_in {
                    for a1 in 0..ca.r_left {
                        for b1 in 0..ca.r_right {
                            let av = ca.at(a1, i, j, b1);
                            if av == 0.0 {
                                continue;
                            }
                            for a2 in 0..cx.r_left {
                                let row = a1 * cx.r_left + a2;
                                let xrow = (a2 * cx.n + j) * cx.r_right;
                                let orow = (row * ca.n_out + i) * rr + b1 * cx.r_right;
                                for b2 in 0..cx.r_right {
                                    c.data[orow + b2] += av * cx.data[xrow + b2];
                                }
                            }
                        }
                    }
                }
            }
            cores.push(c);
        }
        TtVector::from_cores(cores)
    }

    /// Operator-operator product; ranks multiply.
    pub fn matmat(&self, other: &TtMatrix) -> Result<TtMatrix, TtError> {
        if self.col_modes() != other.row_modes() {
            return Err(TtError::ModeMismatch(self.col_modes(), other.row_modes()));
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let rl = ca.r_left * cb.r_left;
            let rr = ca.r_right * cb.r_right;
            let mut c = Core4::zeros(rl, ca.n_out, cb.n_in, rr);
            for i in 0..ca.n_out {
                for l in 0..ca.n_in {
                    for j in 0..cb.n_in {
                        for a1 in 0..ca.r_left {
                            for b1 in 0..ca.r_right {
                                let av = ca.at(a1, i, l, b1);
                                if av == 0.0 {
                                    continue;
                                }
                                for a2 in 0..cb.r_left {
                                    for b2 in 0..cb.r_right {
                                        *c.at_mut(
                                            a1 * cb.r_left + a2,
                                            i,
                                            j,
                                            b1 * cb.r_right + b2,
                                        ) += av * cb.at(a2, l, j, b2);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            cores.push(c);
        }
        TtMatrix::from_cores(cores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_rank_one() -> TtVector {
        TtVector::rank_one(&[vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]).unwrap()
    }

    #[test]
    fn rank_one_eval_is_a_product() {
        let x = small_rank_one();
        assert_eq!(x.eval(&[1, 2]), 10.0);
        assert_eq!(x.modes(), vec![2, 3]);
        assert_eq!(x.ranks(), vec![1, 1, 1]);
    }

    #[test]
    fn constant_tensor_is_constant() {
        let x = TtVector::constant(&[3, 2, 4], -1.25).unwrap();
        assert_eq!(x.eval(&[2, 1, 3]), -1.25);
        assert_eq!(x.eval(&[0, 0, 0]), -1.25);
    }

    #[test]
    fn dot_of_rank_ones_factorizes() {
        let x = small_rank_one();
        let y = TtVector::rank_one(&[vec![1.0, -1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        // (1*1 + 2*(-1)) * (3+4+5) = -12
        assert_relative_eq!(x.dot(&y).unwrap(), -12.0);
        assert_relative_eq!(x.norm() * x.norm(), x.dot(&x).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn add_then_eval_matches_scalar_sum() {
        let x = small_rank_one();
        let y = TtVector::rank_one(&[vec![0.5, 0.0], vec![1.0, -2.0, 0.0]]).unwrap();
        let z = x.add(&y).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_relative_eq!(z.eval(&[i, j]), x.eval(&[i, j]) + y.eval(&[i, j]));
            }
        }
        assert_eq!(z.ranks(), vec![1, 2, 1]);
    }

    #[test]
    fn hadamard_matches_pointwise_product() {
        let x = small_rank_one();
        let y = x.add(&TtVector::constant(&[2, 3], 1.0).unwrap()).unwrap();
        let z = x.hadamard(&y).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_relative_eq!(z.eval(&[i, j]), x.eval(&[i, j]) * y.eval(&[i, j]));
            }
        }
    }

    #[test]
    fn identity_matvec_is_identity() {
        let x = small_rank_one();
        let id = TtMatrix::identity(&[2, 3]).unwrap();
        let y = id.matvec(&x).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_relative_eq!(y.eval(&[i, j]), x.eval(&[i, j]));
            }
        }
    }

    #[test]
    fn diagonal_operator_scales_pointwise() {
        let x = small_rank_one();
        let d = TtVector::rank_one(&[vec![2.0, 0.5], vec![1.0, 0.0, -1.0]]).unwrap();
        let y = TtMatrix::diagonal(&d).matvec(&x).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_relative_eq!(y.eval(&[i, j]), d.eval(&[i, j]) * x.eval(&[i, j]));
            }
        }
    }

    #[test]
    fn weighted_sum_is_full_contraction() {
        let x = small_rank_one();
        let w = vec![vec![1.0, 1.0], vec![2.0, 2.0, 2.0]];
        // sum over all entries times 2 = (1+2)*(3+4+5)*2 = 72
        assert_relative_eq!(x.weighted_sum(&w).unwrap(), 72.0);
    }

    #[test]
    fn mode_mismatch_is_reported() {
        let x = small_rank_one();
        let y = TtVector::constant(&[2, 4], 1.0).unwrap();
        assert!(matches!(x.dot(&y), Err(TtError::ModeMismatch(..))));
        assert!(matches!(x.add(&y), Err(TtError::ModeMismatch(..))));
    }

    #[test]
    fn bad_core_chains_are_rejected() {
        let c1 = Core3::zeros(1, 2, 3);
        let c2 = Core3::zeros(2, 2, 1);
        assert!(matches!(
            TtVector::from_cores(vec![c1, c2]),
            Err(TtError::RankMismatch { pos: 1, .. })
        ));
        let c = Core3::zeros(2, 2, 1);
        assert!(matches!(
            TtVector::from_cores(vec![c]),
            Err(TtError::BoundaryRank { .. })
        ));
    }

    #[test]
    fn transpose_swaps_action() {
        // Shift operator on 3 nodes in one mode.
        let mut shift = Core4::zeros(1, 3, 3, 1);
        *shift.at_mut(0, 1, 0, 0) = 1.0;
        *shift.at_mut(0, 2, 1, 0) = 1.0;
        let a = TtMatrix::from_cores(vec![shift]).unwrap();
        let e0 = TtVector::rank_one(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let fwd = a.matvec(&e0).unwrap();
        assert_eq!(fwd.eval(&[1]), 1.0);
        let back = a.transpose().matvec(&fwd).unwrap();
        assert_eq!(back.eval(&[0]), 1.0);
    }
}
