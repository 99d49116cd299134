//! Small-matrix singular value decomposition used by the TT kernels.
//!
//! Built from a Householder QR reduction followed by a one-sided Jacobi
//! iteration on the small triangular factor. QR is a direct (non-iterative)
//! step and Jacobi rotations converge unconditionally, so the combination
//! stays reliable on exactly rank-deficient or repeated-value inputs, where
//! iterative bidiagonal SVDs can mis-converge and return corrupted factors.
//! TT workloads hit such inputs constantly: constant fields, boundary masks,
//! and identity-extended cores all produce unfoldings with repeated rows.

use nalgebra::DMatrix;

/// Thin SVD `A = U * diag(s) * Vt` with `k = min(m, c)` columns in `U`,
/// singular values sorted descending.
pub(crate) struct ThinSvd {
    /// Left singular vectors, row-major `m x k`.
    pub u: Vec<f64>,
    /// Singular values, descending, length `k`.
    pub s: Vec<f64>,
    /// Right singular vectors transposed, row-major `k x c`.
    pub vt: Vec<f64>,
}

const JACOBI_EPS: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided Jacobi on a square `n x n` column-major working copy: rotates
/// column pairs until all Gram off-diagonals vanish relative to the column
/// norms. Returns `(w, v)` with `A = w * v^T` and `w`'s columns orthogonal.
fn jacobi_columns(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    // Column-major storage keeps the rotations cache-friendly.
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[j * n + i] = a[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut app, mut aqq, mut apq) = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..n {
                    let wp = w[p * n + i];
                    let wq = w[q * n + i];
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                let np = app.sqrt();
                let nq = aqq.sqrt();
                if np == 0.0 || nq == 0.0 || apq.abs() <= JACOBI_EPS * np * nq {
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau == 0.0 {
                    1.0
                } else {
                    tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..n {
                    let wp = w[p * n + i];
                    let wq = w[q * n + i];
                    w[p * n + i] = cs * wp - sn * wq;
                    w[q * n + i] = sn * wp + cs * wq;
                    let vp = v[p * n + i];
                    let vq = v[q * n + i];
                    v[p * n + i] = cs * vp - sn * vq;
                    v[q * n + i] = sn * vp + cs * vq;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Thin SVD for a tall or square matrix (`m >= c`), row-major `m x c`.
fn thin_svd_tall(a: &[f64], m: usize, c: usize) -> ThinSvd {
    debug_assert!(m >= c);
    let qr = DMatrix::from_row_slice(m, c, a).qr();
    let qmat = qr.q();
    let rmat = qr.r();
    let mut r = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            r[i * c + j] = rmat[(i, j)];
        }
    }
    let (w, v) = jacobi_columns(&r, c);

    // Column norms of w are the singular values; sort them descending.
    let mut order: Vec<usize> = (0..c).collect();
    let norms: Vec<f64> = (0..c)
        .map(|j| (0..c).map(|i| w[j * c + i] * w[j * c + i]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let mut s = vec![0.0; c];
    let mut ur = vec![0.0; c * c]; // row-major c x c, columns = sorted u of R
    let mut vt = vec![0.0; c * c];
    for (slot, &j) in order.iter().enumerate() {
        let nj = norms[j];
        s[slot] = nj;
        if nj > 0.0 {
            for i in 0..c {
                ur[i * c + slot] = w[j * c + i] / nj;
            }
        }
        for i in 0..c {
            vt[slot * c + i] = v[j * c + i];
        }
    }

    // U = Q * U_R, row-major m x c.
    let mut u = vec![0.0; m * c];
    for i in 0..m {
        for jj in 0..c {
            let mut acc = 0.0;
            for l in 0..c {
                acc += qmat[(i, l)] * ur[l * c + jj];
            }
            u[i * c + jj] = acc;
        }
    }
    ThinSvd { u, s, vt }
}

/// Thin SVD for any shape; wide inputs go through the transpose.
pub(crate) fn thin_svd(a: &[f64], m: usize, c: usize) -> ThinSvd {
    debug_assert_eq!(a.len(), m * c);
    if m >= c {
        return thin_svd_tall(a, m, c);
    }
    let mut at = vec![0.0; m * c];
    for i in 0..m {
        for j in 0..c {
            at[j * m + i] = a[i * c + j];
        }
    }
    let t = thin_svd_tall(&at, c, m);
    // A^T = U' S V'^T means A = V' S U'^T.
    let k = m;
    let mut u = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            u[i * k + j] = t.vt[j * m + i];
        }
    }
    let mut vt = vec![0.0; k * c];
    for j in 0..k {
        for i in 0..c {
            vt[j * c + i] = t.u[i * k + j];
        }
    }
    ThinSvd { u, s: t.s, vt }
}

/// Least-squares solve of the square system `A X = B` through the
/// pseudoinverse: `X = V S^+ U^T B`. Singular values below `rcond * s_max`
/// are treated as zero. `B` is row-major `n x nrhs`. Returns `None` when `A`
/// vanishes entirely.
pub(crate) fn pseudo_solve(
    a: &[f64],
    n: usize,
    b: &[f64],
    nrhs: usize,
    rcond: f64,
) -> Option<Vec<f64>> {
    let svd = thin_svd(a, n, n);
    let s0 = svd.s[0];
    if s0 == 0.0 {
        return None;
    }
    let cut = rcond * s0;
    // y = U^T B, scaled by 1/s where s is kept.
    let mut y = vec![0.0; n * nrhs];
    for j in 0..n {
        let sj = svd.s[j];
        if sj <= cut {
            continue;
        }
        for r in 0..nrhs {
            let mut acc = 0.0;
            for i in 0..n {
                acc += svd.u[i * n + j] * b[i * nrhs + r];
            }
            y[j * nrhs + r] = acc / sj;
        }
    }
    // X = V y  (V's rows are vt's columns).
    let mut x = vec![0.0; n * nrhs];
    for i in 0..n {
        for r in 0..nrhs {
            let mut acc = 0.0;
            for j in 0..n {
                acc += svd.vt[j * n + i] * y[j * nrhs + r];
            }
            x[i * nrhs + r] = acc;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &ThinSvd, m: usize, c: usize) -> Vec<f64> {
        let k = m.min(c);
        let mut out = vec![0.0; m * c];
        for i in 0..m {
            for j in 0..c {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += svd.u[i * k + l] * svd.s[l] * svd.vt[l * c + j];
                }
                out[i * c + j] = acc;
            }
        }
        out
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_matrices_get_exact_rank_one_factors() {
        // These shapes make nalgebra's bidiagonal SVD mis-converge on
        // constant input (wrong dominant singular value, corrupted vectors).
        for (m, c) in [(9usize, 5usize), (5, 9), (9, 9), (45, 5), (9, 10)] {
            let a = vec![3.25; m * c];
            let svd = thin_svd(&a, m, c);
            let truth = 3.25 * ((m * c) as f64).sqrt();
            assert!(
                (svd.s[0] - truth).abs() <= 1e-12 * truth,
                "{m}x{c}: s0 {} vs {truth}",
                svd.s[0]
            );
            for s in &svd.s[1..] {
                assert!(s.abs() <= 1e-12 * truth, "{m}x{c}: trailing {s}");
            }
            let back = reconstruct(&svd, m, c);
            assert!(max_abs_diff(&a, &back) <= 1e-12 * truth, "{m}x{c}");
            // The dominant left vector of a constant matrix is constant.
            let k = m.min(c);
            let col0: Vec<f64> = (0..m).map(|i| svd.u[i * k]).collect();
            let spread = col0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - col0.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(spread <= 1e-12, "{m}x{c}: u spread {spread}");
        }
    }

    #[test]
    fn random_matrix_matches_singular_values_and_orthogonality() {
        let (m, c) = (11usize, 7usize);
        let mut a = vec![0.0; m * c];
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = ((i * 37 + 11) as f64).sin() + 0.3 * ((i * 13) as f64).cos();
        }
        let svd = thin_svd(&a, m, c);
        let back = reconstruct(&svd, m, c);
        assert!(max_abs_diff(&a, &back) <= 1e-12 * svd.s[0]);
        // Orthonormal columns of U and rows of Vt.
        for p in 0..c {
            for q in 0..c {
                let mut uu = 0.0;
                for i in 0..m {
                    uu += svd.u[i * c + p] * svd.u[i * c + q];
                }
                let mut vv = 0.0;
                for i in 0..c {
                    vv += svd.vt[p * c + i] * svd.vt[q * c + i];
                }
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((uu - want).abs() <= 1e-12, "UtU[{p},{q}] = {uu}");
                assert!((vv - want).abs() <= 1e-12, "VVt[{p},{q}] = {vv}");
            }
        }
        // Cross-check the spectrum against the dense eigenvalues of A^T A.
        // Squaring limits that oracle to ~sqrt(eps) relative accuracy, so
        // only singular values above its noise floor are comparable.
        let am = DMatrix::from_row_slice(m, c, &a);
        let gram = am.transpose() * &am;
        let mut eigs: Vec<f64> =
            gram.symmetric_eigen().eigenvalues.iter().map(|e| e.max(0.0).sqrt()).collect();
        eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let floor = 1e-6 * svd.s[0];
        for (got, want) in svd.s.iter().zip(&eigs) {
            if *want > floor {
                assert!((got - want).abs() <= 1e-10 * svd.s[0], "{got} vs {want}");
            } else {
                assert!(*got <= floor, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn exact_rank_two_input_reports_rank_two() {
        let (m, c) = (8usize, 6usize);
        let u1: Vec<f64> = (0..m).map(|i| 1.0 + i as f64).collect();
        let v1: Vec<f64> = (0..c).map(|j| (j as f64 * 0.4).cos()).collect();
        let u2: Vec<f64> = (0..m).map(|i| (i as f64 * 0.7).sin()).collect();
        let v2: Vec<f64> = (0..c).map(|j| 0.5 - j as f64 * 0.1).collect();
        let mut a = vec![0.0; m * c];
        for i in 0..m {
            for j in 0..c {
                a[i * c + j] = u1[i] * v1[j] + u2[i] * v2[j];
            }
        }
        let svd = thin_svd(&a, m, c);
        assert!(svd.s[1] > 1e-8 * svd.s[0]);
        for s in &svd.s[2..] {
            assert!(s.abs() <= 1e-12 * svd.s[0], "trailing {s}");
        }
        let back = reconstruct(&svd, m, c);
        assert!(max_abs_diff(&a, &back) <= 1e-12 * svd.s[0]);
    }

    #[test]
    fn zero_matrix_is_all_zero_factors() {
        let svd = thin_svd(&vec![0.0; 12], 4, 3);
        assert!(svd.s.iter().all(|&s| s == 0.0));
        assert!(svd.u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pseudo_solve_handles_singular_systems() {
        // Rank-one system: solution must satisfy A x = b when b lies in the
        // range, picked here as b = A * ones.
        let n = 4usize;
        let col = [1.0f64, 2.0, -1.0, 0.5];
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = col[i] * col[j];
            }
        }
        let ones = vec![1.0; n];
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                b[i] += a[i * n + j] * ones[j];
            }
        }
        let x = pseudo_solve(&a, n, &b, 1, 1e-13).unwrap();
        let mut ax = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                ax[i] += a[i * n + j] * x[j];
            }
        }
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() <= 1e-10, "row {i}: {} vs {}", ax[i], b[i]);
        }
        assert!(pseudo_solve(&vec![0.0; 9], 3, &[1.0, 0.0, 0.0], 1, 1e-13).is_none());
    }
}
