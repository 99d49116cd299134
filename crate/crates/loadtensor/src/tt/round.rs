//! TT rank truncation: right-to-left orthogonalization followed by a
//! left-to-right sweep of truncated SVDs.
//!
//! After the orthogonalization pass every core right of the working one has
//! orthonormal rows, so each local SVD sees the true singular values of the
//! corresponding bond unfolding and the per-bond truncation budget
//! `tol * ||x|| / sqrt(K-1)` bounds the total relative error by `tol`.

use super::dense::{dmatrix_to_row_major, row_major_to_dmatrix};
use super::svd::thin_svd;
use super::{Core3, Core4, TtError, TtMatrix, TtVector};

/// Keeps the largest singular values whose discarded tail stays within
/// `budget` in the Frobenius sense; never returns less than rank 1.
pub(crate) fn truncation_rank(sv: &[f64], budget: f64, max_rank: usize) -> usize {
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

/// Right-orthogonalizes cores `1..K` in place (every core except possibly
/// the first gets orthonormal rows in its right unfolding). Returns the
/// Frobenius norm of the tensor, read off the first core afterwards.
pub(crate) fn right_orthogonalize(cores: &mut [Core3]) -> f64 {
    for k in (1..cores.len()).rev() {
        let c = &cores[k];
        let (rl, n, rr) = (c.r_left, c.n, c.r_right);
        // Right unfolding (rl x n*rr); LQ via QR of the transpose.
        let m = row_major_to_dmatrix(&c.data, rl, n * rr).transpose();
        let qr = m.qr();
        let q = qr.q(); // (n*rr) x min
        let r = qr.r(); // min x rl
        let rnew = q.ncols();
        let qt = q.transpose();
        cores[k] = Core3 { r_left: rnew, n, r_right: rr, data: dmatrix_to_row_major(&qt) };
        // Absorb L = r^T into the previous core's right index.
        let prev = &cores[k - 1];
        let lmat = dmatrix_to_row_major(&r.transpose()); // rl x rnew
        let merged =
            super::matmul(&prev.data, prev.r_left * prev.n, rl, &lmat, rnew);
        cores[k - 1] =
            Core3 { r_left: prev.r_left, n: prev.n, r_right: rnew, data: merged };
    }
    cores[0].data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rounds a TT vector to relative tolerance `tol` with a hard rank cap.
/// Output ranks never exceed the input's.
pub fn tt_round(x: &TtVector, tol: f64, max_rank: usize) -> Result<TtVector, TtError> {
    let mut cores = x.cores.clone();
    let k_dims = cores.len();
    if k_dims == 1 {
        return TtVector::from_cores(cores);
    }
    let norm = right_orthogonalize(&mut cores);
    if norm == 0.0 {
        // Exactly zero tensor: collapse to rank one.
        let modes = x.modes();
        return TtVector::constant(&modes, 0.0);
    }
    let budget = tol * norm / ((k_dims - 1) as f64).sqrt();
    for k in 0..k_dims - 1 {
        let c = &cores[k];
        let (rl, n, rr) = (c.r_left, c.n, c.r_right);
        let svd = thin_svd(&c.data, rl * n, rr);
        let kmin = (rl * n).min(rr);
        let rank = truncation_rank(&svd.s, budget, max_rank);
        let mut data = vec![0.0; rl * n * rank];
        for i in 0..rl * n {
            for j in 0..rank {
                data[i * rank + j] = svd.u[i * kmin + j];
            }
        }
        cores[k] = Core3 { r_left: rl, n, r_right: rank, data };
        // carry = diag(s) * vt, pushed into the next core's left index.
        let next = &cores[k + 1];
        let mut carry = vec![0.0; rank * rr];
        for i in 0..rank {
            for j in 0..rr {
                carry[i * rr + j] = svd.s[i] * svd.vt[i * rr + j];
            }
        }
        let merged = super::matmul(&carry, rank, rr, &next.data, next.n * next.r_right);
        cores[k + 1] = Core3 { r_left: rank, n: next.n, r_right: next.r_right, data: merged };
    }
    TtVector::from_cores(cores)
}

/// Rounds a TT matrix by treating each `(row, col)` mode pair as a single
/// fused mode. The flat core layouts agree, so the reinterpretation is free.
pub fn tt_round_matrix(
    a: &TtMatrix,
    tol: f64,
    max_rank: usize,
) -> Result<TtMatrix, TtError> {
    let fused: Vec<Core3> = a
        .cores
        .iter()
        .map(|c| Core3 {
            r_left: c.r_left,
            n: c.n_out * c.n_in,
            r_right: c.r_right,
            data: c.data.clone(),
        })
        .collect();
    let rounded = tt_round(&TtVector::from_cores(fused)?, tol, max_rank)?;
    let cores: Vec<Core4> = rounded
        .cores
        .into_iter()
        .zip(&a.cores)
        .map(|(c, orig)| Core4 {
            r_left: c.r_left,
            n_out: orig.n_out,
            n_in: orig.n_in,
            r_right: c.r_right,
            data: c.data,
        })
        .collect();
    TtMatrix::from_cores(cores)
}

#[cfg(test)]
mod tests {
    use super::super::dense::{tt_from_dense, tt_to_dense, DenseTensor};
    use super::*;

    #[test]
    fn rounding_recompresses_a_structural_sum() {
        // x + x has doubled ranks but the same content; rounding restores them.
        let t = DenseTensor::from_fn(&[4, 5, 6], |idx| {
            (0.3 * idx[0] as f64).sin() + (0.2 * idx[1] as f64 * idx[2] as f64).cos()
        })
        .unwrap();
        let x = tt_from_dense(&t, 1e-12, 50).unwrap();
        let doubled = x.add(&x).unwrap();
        assert!(doubled.max_rank() > x.max_rank());
        let rounded = tt_round(&doubled, 1e-12, 50).unwrap();
        assert!(rounded.max_rank() <= x.max_rank());
        let back = tt_to_dense(&rounded).unwrap();
        for (a, b) in t.data.iter().zip(&back.data) {
            assert!((2.0 * a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rounding_never_grows_ranks() {
        let t = DenseTensor::from_fn(&[5, 5, 5, 5], |idx| {
            (idx.iter().sum::<usize>() as f64).powi(2) + 1.0
        })
        .unwrap();
        let x = tt_from_dense(&t, 1e-14, 100).unwrap();
        let r = tt_round(&x, 1e-3, 100).unwrap();
        for (a, b) in r.ranks().iter().zip(x.ranks()) {
            assert!(*a <= b);
        }
    }

    #[test]
    fn rank_cap_is_respected() {
        let t = DenseTensor::from_fn(&[6, 6, 6], |idx| {
            // Full-rank-ish random-looking smooth garbage.
            ((idx[0] * 31 + idx[1] * 17 + idx[2] * 7) as f64).sin()
                * ((idx[0] * idx[1] * idx[2]) as f64 + 1.0).ln()
        })
        .unwrap();
        let x = tt_from_dense(&t, 1e-15, 36).unwrap();
        let r = tt_round(&x, 0.0, 3).unwrap();
        assert!(r.max_rank() <= 3);
    }

    #[test]
    fn zero_tensor_rounds_to_rank_one() {
        let x = TtVector::constant(&[3, 4, 5], 0.0).unwrap();
        let doubled = x.add(&x).unwrap();
        let r = tt_round(&doubled, 1e-10, 10).unwrap();
        assert_eq!(r.max_rank(), 1);
        assert_eq!(r.norm(), 0.0);
    }

    #[test]
    fn matrix_rounding_recompresses_operator_sums() {
        use super::super::tt_matrix_to_dense;
        // I + I has doubled ranks; rounding restores rank one per bond and
        // the dense image must still be exactly 2*I.
        let eye = TtMatrix::identity(&[3, 4, 5]).unwrap();
        let doubled = eye.add(&eye).unwrap();
        assert!(doubled.max_rank() == 2);
        let rounded = tt_round_matrix(&doubled, 1e-13, 10).unwrap();
        assert_eq!(rounded.max_rank(), 1);
        let (dense, rows, cols) = tt_matrix_to_dense(&rounded).unwrap();
        assert_eq!((rows, cols), (60, 60));
        for r in 0..rows {
            for c in 0..cols {
                let want = if r == c { 2.0 } else { 0.0 };
                assert!((dense[r * cols + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relative_error_bound_holds() {
        let t = DenseTensor::from_fn(&[8, 7, 6], |idx| {
            1.0 / (1.0 + (idx[0] + idx[1] + idx[2]) as f64)
        })
        .unwrap();
        let x = tt_from_dense(&t, 1e-14, 100).unwrap();
        for tol in [1e-2, 1e-4, 1e-8] {
            let r = tt_round(&x, tol, 100).unwrap();
            let diff = r.add(&x.scaled(-1.0)).unwrap();
            assert!(diff.norm() <= tol * x.norm() * 1.0001, "tol {tol}");
        }
    }
}
