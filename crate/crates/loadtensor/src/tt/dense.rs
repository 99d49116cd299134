//! Conversion between dense row-major tensors and tensor trains.
//!
//! The dense side exists for oracles, small problems and verification; both
//! directions refuse to materialize more than [`DENSE_GUARD`] entries.

use super::svd::thin_svd;
use super::{Core3, TtError, TtVector};
use nalgebra::DMatrix;

/// Hard cap on dense materialization (entries).
pub const DENSE_GUARD: usize = 10_000_000;

/// Dense tensor in row-major (last mode fastest) order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub modes: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(modes: Vec<usize>, data: Vec<f64>) -> Result<Self, TtError> {
        let total: usize = modes.iter().product();
        if modes.is_empty() {
            return Err(TtError::Empty);
        }
        if data.len() != total {
            return Err(TtError::CoreShape { pos: 0, len: data.len(), shape: (total, 0, 0, 0) });
        }
        Ok(DenseTensor { modes, data })
    }

    /// Tabulates a function of the multi-index.
    pub fn from_fn(
        modes: &[usize],
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self, TtError> {
        let total: usize = modes.iter().product();
        if total > DENSE_GUARD {
            return Err(TtError::DenseTooLarge { total, guard: DENSE_GUARD });
        }
        let mut idx = vec![0usize; modes.len()];
        let mut data = Vec::with_capacity(total);
        loop {
            data.push(f(&idx));
            // Row-major odometer increment.
            let mut d = modes.len();
            loop {
                if d == 0 {
                    return DenseTensor::new(modes.to_vec(), data);
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < modes[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        let mut lin = 0;
        for (d, &i) in multi.iter().enumerate() {
            lin = lin * self.modes[d] + i;
        }
        lin
    }

    pub fn at(&self, multi: &[usize]) -> f64 {
        self.data[self.linear_index(multi)]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub(crate) fn row_major_to_dmatrix(data: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, data.iter().copied())
}

pub(crate) fn dmatrix_to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Truncation rank for a singular-value tail budget.
fn truncation_rank(sv: &[f64], budget: f64, max_rank: usize) -> usize {
    let mut tail = 0.0;
    let mut rank = sv.len();
    while rank > 1 {
        let next = tail + sv[rank - 1] * sv[rank - 1];
        if next.sqrt() > budget {
            break;
        }
        tail = next;
        rank -= 1;
    }
    rank.min(max_rank).max(1)
}

/// Sequential SVD compression of a dense tensor into TT form.
///
/// The per-step truncation budget `tol * ||X|| / sqrt(K-1)` keeps the total
/// relative reconstruction error at or below `tol`.
pub fn tt_from_dense(x: &DenseTensor, tol: f64, max_rank: usize) -> Result<TtVector, TtError> {
    let total: usize = x.modes.iter().product();
    if total > DENSE_GUARD {
        return Err(TtError::DenseTooLarge { total, guard: DENSE_GUARD });
    }
    let k_dims = x.modes.len();
    if k_dims == 1 {
        return TtVector::from_cores(vec![Core3 {
            r_left: 1,
            n: x.modes[0],
            r_right: 1,
            data: x.data.clone(),
        }]);
    }
    let norm = x.norm();
    let budget = if norm == 0.0 { 0.0 } else { tol * norm / ((k_dims - 1) as f64).sqrt() };
    let mut cores = Vec::with_capacity(k_dims);
    let mut carry = x.data.clone();
    let mut r_left = 1usize;
    let mut rest: usize = total;
    for &n in x.modes.iter().take(k_dims - 1) {
        rest /= n;
        let rows = r_left * n;
        let svd = thin_svd(&carry, rows, rest);
        let kmin = rows.min(rest);
        let rank = truncation_rank(&svd.s, budget, max_rank);
        let mut core = vec![0.0; rows * rank];
        for i in 0..rows {
            for j in 0..rank {
                core[i * rank + j] = svd.u[i * kmin + j];
            }
        }
        cores.push(Core3 { r_left, n, r_right: rank, data: core });
        let mut next = vec![0.0; rank * rest];
        for i in 0..rank {
            let s = svd.s[i];
            for j in 0..rest {
                next[i * rest + j] = s * svd.vt[i * rest + j];
            }
        }
        carry = next;
        r_left = rank;
    }
    cores.push(Core3 { r_left, n: x.modes[k_dims - 1], r_right: 1, data: carry });
    TtVector::from_cores(cores)
}

/// Full reconstruction of a TT vector, guarded by [`DENSE_GUARD`].
pub fn tt_to_dense(x: &TtVector) -> Result<DenseTensor, TtError> {
    let total = x.total_len();
    if total > DENSE_GUARD {
        return Err(TtError::DenseTooLarge { total, guard: DENSE_GUARD });
    }
    // Accumulate left-to-right: carry has shape (prefix, r_k).
    let mut carry = vec![1.0];
    let mut prefix = 1usize;
    for c in &x.cores {
        let next = super::matmul(&carry, prefix, c.r_left, &c.data, c.n * c.r_right);
        prefix *= c.n;
        carry = next;
    }
    DenseTensor::new(x.modes(), carry)
}

/// Dense reconstruction of a TT operator as a full matrix (row-major,
/// `rows x cols`), for oracle comparisons only.
pub fn tt_matrix_to_dense(a: &super::TtMatrix) -> Result<(Vec<f64>, usize, usize), TtError> {
    let rows: usize = a.row_modes().iter().product();
    let cols: usize = a.col_modes().iter().product();
    let total = rows.checked_mul(cols).ok_or(TtError::DenseTooLarge {
        total: usize::MAX,
        guard: DENSE_GUARD,
    })?;
    if total > DENSE_GUARD {
        return Err(TtError::DenseTooLarge { total, guard: DENSE_GUARD });
    }
    // carry: (rows_prefix * cols_prefix, r) with row-major (i_prefix, j_prefix) pairs.
    let mut carry = vec![1.0];
    let mut rp = 1usize;
    let mut cp = 1usize;
    for c in &a.cores {
        let mut next = vec![0.0; rp * c.n_out * cp * c.n_in * c.r_right];
        for ip in 0..rp {
            for jp in 0..cp {
                let crow = (ip * cp + jp) * c.r_left;
                for i in 0..c.n_out {
                    for j in 0..c.n_in {
                        let orow = (((ip * c.n_out + i) * cp + jp) * c.n_in + j) * c.r_right;
                        for a_l in 0..c.r_left {
                            let cv = carry[crow + a_l];
                            if cv == 0.0 {
                                continue;
                            }
                            let arow = ((a_l * c.n_out + i) * c.n_in + j) * c.r_right;
                            for b in 0..c.r_right {
                                next[orow + b] += cv * c.data[arow + b];
                            }
                        }
                    }
                }
            }
        }
        rp *= c.n_out;
        cp *= c.n_in;
        carry = next;
    }
    Ok((carry, rows, cols))
}
