//! Adaptive cross approximation: builds a TT representation of a tensor from
//! a black-box entry evaluator, without ever tabulating the full tensor.
//!
//! The method alternates sweeps over the modes. A left-to-right pass selects
//! nested row sets by maxvol pivoting on tall unfoldings sampled at the
//! current column sets; a right-to-left pass rebuilds the column sets and the
//! interpolation cores. Each pass oversamples with a few random indices so
//! ranks can grow where the current cross misses structure. Every sweep ends
//! with a Monte Carlo verification on fresh random entries; the result is
//! rejected if the sampled relative error stays above ten times the
//! tolerance.

use super::dense::dmatrix_to_row_major;
use super::svd::{pseudo_solve, thin_svd};
use super::{Core3, TtError, TtVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tuning knobs for [`tt_cross`].
#[derive(Debug, Clone)]
pub struct CrossOptions {
    /// Target sampled relative error.
    pub tol: f64,
    /// Hard cap on bond ranks.
    pub max_rank: usize,
    /// Size of the initial random column sets.
    pub initial_rank: usize,
    /// Extra random rows/columns added per pass for rank adaptivity.
    pub kick_rank: usize,
    /// Maximum number of full sweeps.
    pub max_sweeps: usize,
    /// Seed for all random index draws; same seed, same result.
    pub seed: u64,
    /// Number of random entries checked after each sweep.
    pub verify_samples: usize,
}

impl Default for CrossOptions {
    fn default() -> Self {
        CrossOptions {
            tol: 1e-10,
            max_rank: 50,
            initial_rank: 6,
            kick_rank: 4,
            max_sweeps: 8,
            seed: 0x5EED_CAB1E,
            verify_samples: 1000,
        }
    }
}

fn space_size(modes: &[usize]) -> usize {
    modes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX)
}

fn random_tuple(rng: &mut ChaCha8Rng, modes: &[usize]) -> Vec<usize> {
    modes.iter().map(|&n| rng.gen_range(0..n)).collect()
}

/// Grows `set` with distinct random tuples up to `target` entries.
fn add_distinct(set: &mut Vec<Vec<usize>>, rng: &mut ChaCha8Rng, modes: &[usize], target: usize, space: usize) {
    let target = target.min(space);
    let mut attempts = 0usize;
    while set.len() < target && attempts < 50 * target.max(1) {
        let cand = random_tuple(rng, modes);
        if !set.contains(&cand) {
            set.push(cand);
        }
        attempts += 1;
    }
}

/// Evaluates the tensor on a cross: rows are (prefix, mode index) pairs,
/// columns are suffixes. Row-major `(|rows| * n) x |cols|`.
fn eval_matrix<F: Fn(&[usize]) -> f64>(
    f: &F,
    rows: &[Vec<usize>],
    n: usize,
    cols: &[Vec<usize>],
    ndims: usize,
) -> Result<Vec<f64>, TtError> {
    let rc = cols.len();
    let mut out = vec![0.0; rows.len() * n * rc];
    let mut idx: Vec<usize> = Vec::with_capacity(ndims);
    for (p, prefix) in rows.iter().enumerate() {
        for i in 0..n {
            for (q, suffix) in cols.iter().enumerate() {
                idx.clear();
                idx.extend_from_slice(prefix);
                idx.push(i);
                idx.extend_from_slice(suffix);
                debug_assert_eq!(idx.len(), ndims);
                let v = f(&idx);
                if !v.is_finite() {
                    return Err(TtError::NonFiniteValue(idx.clone()));
                }
                out[(p * n + i) * rc + q] = v;
            }
        }
    }
    Ok(out)
}

/// Orthonormal column factor of a sampled unfolding, with rank chosen by a
/// relative singular value cutoff. Returns `(U, rank)` with `U` row-major
/// `m x rank`.
fn left_factor(mat: &[f64], m: usize, c: usize, tol: f64, max_rank: usize) -> (Vec<f64>, usize) {
    let svd = thin_svd(mat, m, c);
    let s0 = svd.s[0];
    if s0 == 0.0 {
        // All-zero sample: fabricate a unit column so downstream selection
        // stays well defined; the final cores are zero anyway.
        let mut u = vec![0.0; m];
        u[0] = 1.0;
        return (u, 1);
    }
    let cutoff = (tol * 0.1 * s0).max(f64::MIN_POSITIVE);
    let mut rank = svd.s.iter().filter(|&&s| s > cutoff).count();
    rank = rank.clamp(1, m.min(c).min(max_rank));
    let k = m.min(c);
    let mut u = vec![0.0; m * rank];
    for i in 0..m {
        for j in 0..rank {
            u[i * rank + j] = svd.u[i * k + j];
        }
    }
    (u, rank)
}

/// Greedy maxvol row selection on a tall `m x r` matrix with orthonormal-ish
/// columns. Returns the selected rows and the interpolation coefficients
/// `B = U * U[S,:]^{-1}` (row-major `m x r`, identity on the selected rows).
fn maxvol(u: &[f64], m: usize, r: usize) -> (Vec<usize>, Vec<f64>) {
    debug_assert!(m >= r && r > 0);
    // Rectangular partial-pivot elimination for the starting rows.
    let mut a = u.to_vec();
    let mut order: Vec<usize> = (0..m).collect();
    for j in 0..r {
        let mut piv = j;
        let mut best = -1.0f64;
        for i in j..m {
            let v = a[i * r + j].abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        a.swap_chunks(piv, j, r);
        order.swap(piv, j);
        let d = a[j * r + j];
        if d.abs() > 1e-300 {
            for i in j + 1..m {
                let factor = a[i * r + j] / d;
                if factor != 0.0 {
                    for l in j..r {
                        a[i * r + l] -= factor * a[j * r + l];
                    }
                }
            }
        }
    }
    let mut sel: Vec<usize> = order[..r].to_vec();

    // B = U * U[sel]^{-1} via an LU solve on the transposed system.
    let mut b = interpolation_matrix(u, m, r, &sel);

    // Swap rows into the submatrix while any coefficient exceeds 1 + delta.
    let delta = 0.01;
    let max_iters = 4 * r + 100;
    for _ in 0..max_iters {
        let mut bi = 0usize;
        let mut bj = 0usize;
        let mut bv = 0.0f64;
        for i in 0..m {
            for j in 0..r {
                let v = b[i * r + j].abs();
                if v > bv {
                    bv = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        if bv <= 1.0 + delta {
            break;
        }
        // Rank-1 update for the swap sel[bj] <- bi:
        // B <- B - B[:, bj] (B[bi, :] - e_bj^T) / B[bi, bj].
        let denom = b[bi * r + bj];
        let col: Vec<f64> = (0..m).map(|i| b[i * r + bj]).collect();
        let mut row: Vec<f64> = b[bi * r..(bi + 1) * r].to_vec();
        row[bj] -= 1.0;
        for i in 0..m {
            if col[i] != 0.0 {
                let scale = col[i] / denom;
                for j in 0..r {
                    b[i * r + j] -= scale * row[j];
                }
            }
        }
        sel[bj] = bi;
    }
    (sel, b)
}

trait SwapChunks {
    fn swap_chunks(&mut self, i: usize, j: usize, width: usize);
}

impl SwapChunks for Vec<f64> {
    fn swap_chunks(&mut self, i: usize, j: usize, width: usize) {
        if i == j {
            return;
        }
        for l in 0..width {
            self.swap(i * width + l, j * width + l);
        }
    }
}

/// `B = U * U[sel]^{-1}` with a pseudoinverse fallback for near-singular
/// selections.
fn interpolation_matrix(u: &[f64], m: usize, r: usize, sel: &[usize]) -> Vec<f64> {
    let mut us = DMatrix::zeros(r, r);
    for (a, &s) in sel.iter().enumerate() {
        for j in 0..r {
            us[(a, j)] = u[s * r + j];
        }
    }
    let mut ut = DMatrix::zeros(r, m);
    for i in 0..m {
        for j in 0..r {
            ut[(j, i)] = u[i * r + j];
        }
    }
    // Solve U[sel]^T X = U^T so that B = X^T.
    let ust = us.transpose();
    let bt = match ust.clone().lu().solve(&ut) {
        Some(x) => dmatrix_to_row_major(&x),
        None => {
            let a = dmatrix_to_row_major(&ust);
            let rhs = dmatrix_to_row_major(&ut);
            pseudo_solve(&a, r, &rhs, m, 1e-13).unwrap_or_else(|| vec![0.0; r * m])
        }
    };
    let mut b = vec![0.0; m * r];
    for i in 0..m {
        for j in 0..r {
            b[i * r + j] = bt[j * m + i];
        }
    }
    b
}

/// Sampled relative error of the TT against the evaluator.
fn verify<F: Fn(&[usize]) -> f64>(
    f: &F,
    tt: &TtVector,
    modes: &[usize],
    rng: &mut ChaCha8Rng,
    samples: usize,
) -> Result<f64, TtError> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for _ in 0..samples.max(1) {
        let idx = random_tuple(rng, modes);
        let fv = f(&idx);
        if !fv.is_finite() {
            return Err(TtError::NonFiniteValue(idx));
        }
        let tv = tt.eval(&idx);
        num += (fv - tv) * (fv - tv);
        den += fv * fv;
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

/// Builds a TT approximation of `f` on the index grid `modes` by adaptive
/// cross sampling. Deterministic for fixed options.
pub fn tt_cross<F: Fn(&[usize]) -> f64>(
    modes: &[usize],
    f: F,
    opts: &CrossOptions,
) -> Result<TtVector, TtError> {
    if modes.is_empty() || modes.iter().any(|&n| n == 0) {
        return Err(TtError::Empty);
    }
    let k_dims = modes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut vrng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9E37_79B9_7F4A_7C15);

    if k_dims == 1 {
        // Single mode: tabulate directly.
        let n = modes[0];
        let mut data = vec![0.0; n];
        for (i, slot) in data.iter_mut().enumerate() {
            let v = f(&[i]);
            if !v.is_finite() {
                return Err(TtError::NonFiniteValue(vec![i]));
            }
            *slot = v;
        }
        return TtVector::from_cores(vec![Core3 { r_left: 1, n, r_right: 1, data }]);
    }

    // Column (suffix) sets per bond, random to begin with.
    let mut jset: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k_dims - 1);
    for k in 0..k_dims - 1 {
        let suffix_modes = &modes[k + 1..];
        let space = space_size(suffix_modes);
        let mut set = Vec::new();
        add_distinct(&mut set, &mut rng, suffix_modes, opts.initial_rank.max(1), space);
        jset.push(set);
    }

    let mut result: Option<TtVector> = None;
    let mut last_err = f64::INFINITY;

    for _sweep in 0..opts.max_sweeps.max(1) {
        // Left-to-right: nested row (prefix) sets by maxvol.
        let mut isets: Vec<Vec<Vec<usize>>> = Vec::with_capacity(k_dims - 1);
        for k in 0..k_dims - 1 {
            let rows: Vec<Vec<usize>> =
                if k == 0 { vec![Vec::new()] } else { isets[k - 1].clone() };
            let suffix_modes = &modes[k + 1..];
            let space = space_size(suffix_modes);
            let mut cols = jset[k].clone();
            let target = cols.len() + opts.kick_rank;
            add_distinct(&mut cols, &mut rng, suffix_modes, target, space);
            let n = modes[k];
            let mat = eval_matrix(&f, &rows, n, &cols, k_dims)?;
            let m_rows = rows.len() * n;
            let (u, rank) = left_factor(&mat, m_rows, cols.len(), opts.tol, opts.max_rank);
            let (sel, _) = maxvol(&u, m_rows, rank);
            let iset: Vec<Vec<usize>> = sel
                .iter()
                .map(|&s| {
                    let mut pre = rows[s / n].clone();
                    pre.push(s % n);
                    pre
                })
                .collect();
            isets.push(iset);
        }

        // Right-to-left: interpolation cores and refreshed column sets.
        let mut cores: Vec<Option<Core3>> = (0..k_dims).map(|_| None).collect();
        let mut cur_cols: Vec<Vec<usize>> = vec![Vec::new()];
        for k in (0..k_dims).rev() {
            let n = modes[k];
            let rc = cur_cols.len();
            if k == 0 {
                let mat = eval_matrix(&f, &[Vec::new()], n, &cur_cols, k_dims)?;
                cores[0] = Some(Core3 { r_left: 1, n, r_right: rc, data: mat });
                break;
            }
            let prefix_modes = &modes[..k];
            let space = space_size(prefix_modes);
            let mut rows = isets[k - 1].clone();
            let target = rows.len() + opts.kick_rank;
            add_distinct(&mut rows, &mut rng, prefix_modes, target, space);
            let rl = rows.len();
            let mat = eval_matrix(&f, &rows, n, &cur_cols, k_dims)?;
            // Transposed unfolding: rows are (mode index, suffix) pairs.
            let mut nt = vec![0.0; n * rc * rl];
            for p in 0..rl {
                for i in 0..n {
                    for q in 0..rc {
                        nt[(i * rc + q) * rl + p] = mat[(p * n + i) * rc + q];
                    }
                }
            }
            let (u, rank) = left_factor(&nt, n * rc, rl, opts.tol, opts.max_rank);
            let (sel, coef) = maxvol(&u, n * rc, rank);
            let mut data = vec![0.0; rank * n * rc];
            for i in 0..n {
                for q in 0..rc {
                    for a in 0..rank {
                        data[(a * n + i) * rc + q] = coef[(i * rc + q) * rank + a];
                    }
                }
            }
            cores[k] = Some(Core3 { r_left: rank, n, r_right: rc, data });
            cur_cols = sel
                .iter()
                .map(|&s| {
                    let mut suf = vec![s / rc];
                    suf.extend_from_slice(&cur_cols[s % rc]);
                    suf
                })
                .collect();
            jset[k - 1] = cur_cols.clone();
        }

        let tt = TtVector::from_cores(cores.into_iter().map(|c| c.expect("core built")).collect())?;
        let err = verify(&f, &tt, modes, &mut vrng, opts.verify_samples)?;
        last_err = err;
        result = Some(tt);
        if err <= opts.tol {
            break;
        }
    }

    let tt = result.expect("at least one sweep runs");
    if last_err <= 10.0 * opts.tol {
        Ok(tt)
    } else {
        Err(TtError::CrossVerification { error: last_err, budget: 10.0 * opts.tol })
    }
}

#[cfg(test)]
mod tests {
    use super::super::dense::{tt_to_dense, DenseTensor};
    use super::*;

    #[test]
    fn separable_function_recovers_rank_one() {
        let modes = [14usize, 9, 11];
        let f = |idx: &[usize]| {
            (0.3 * idx[0] as f64 + 0.2).sin()
                * (1.0 + (idx[1] as f64).powi(2))
                * (-0.1 * idx[2] as f64).exp()
        };
        let opts = CrossOptions { tol: 1e-10, ..CrossOptions::default() };
        let tt = tt_cross(&modes, f, &opts).unwrap();
        assert_eq!(tt.max_rank(), 1);
        let dense = DenseTensor::from_fn(&modes, |idx| f(idx)).unwrap();
        let got = tt_to_dense(&tt).unwrap();
        let scale = dense.norm();
        let mut err = 0.0f64;
        for (a, b) in dense.data.iter().zip(&got.data) {
            err += (a - b) * (a - b);
        }
        assert!(err.sqrt() <= 1e-9 * scale);
    }

    #[test]
    fn low_rank_sum_is_recovered() {
        let modes = [8usize, 10, 7, 6];
        let f = |idx: &[usize]| {
            let (i, j, k, l) = (idx[0] as f64, idx[1] as f64, idx[2] as f64, idx[3] as f64);
            (0.2 * i).cos() * (0.1 * j).exp() * (1.0 + 0.3 * k) * (0.05 * l + 1.0)
                + 0.5 * (0.4 * i).sin() * (0.2 * j + 0.1).sin() * (0.15 * k).cos() * (0.3 * l).exp()
        };
        let opts = CrossOptions { tol: 1e-9, ..CrossOptions::default() };
        let tt = tt_cross(&modes, f, &opts).unwrap();
        assert!(tt.max_rank() <= 3, "ranks {:?}", tt.ranks());
        let dense = DenseTensor::from_fn(&modes, |idx| f(idx)).unwrap();
        let got = tt_to_dense(&tt).unwrap();
        let mut err = 0.0f64;
        for (a, b) in dense.data.iter().zip(&got.data) {
            err += (a - b) * (a - b);
        }
        assert!(err.sqrt() <= 1e-7 * dense.norm(), "err {}", err.sqrt() / dense.norm());
    }

    #[test]
    fn smooth_function_meets_tolerance() {
        let modes = [12usize, 12, 12, 12];
        let f = |idx: &[usize]| {
            1.0 / (1.0 + idx[0] as f64 + 2.0 * idx[1] as f64 + 3.0 * idx[2] as f64
                + idx[3] as f64)
        };
        let opts = CrossOptions { tol: 1e-8, ..CrossOptions::default() };
        let tt = tt_cross(&modes, f, &opts).unwrap();
        let dense = DenseTensor::from_fn(&modes, |idx| f(idx)).unwrap();
        let got = tt_to_dense(&tt).unwrap();
        let mut err = 0.0f64;
        for (a, b) in dense.data.iter().zip(&got.data) {
            err += (a - b) * (a - b);
        }
        assert!(err.sqrt() <= 1e-6 * dense.norm(), "err {}", err.sqrt() / dense.norm());
    }

    #[test]
    fn constant_function_is_rank_one_and_exact() {
        let modes = [9usize, 9, 9];
        let tt = tt_cross(&modes, |_| 3.25, &CrossOptions::default()).unwrap();
        assert_eq!(tt.max_rank(), 1);
        for idx in [[0usize, 0, 0], [4, 4, 4], [8, 0, 5], [3, 8, 8]] {
            assert!((tt.eval(&idx) - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_entry_is_named() {
        let modes = [5usize];
        let f = |idx: &[usize]| if idx[0] == 3 { f64::NAN } else { 1.0 };
        match tt_cross(&modes, f, &CrossOptions::default()) {
            Err(TtError::NonFiniteValue(idx)) => assert_eq!(idx, vec![3]),
            other => panic!("expected non-finite error, got {:?}", other.map(|t| t.ranks())),
        }
    }

    #[test]
    fn same_seed_gives_identical_result() {
        let modes = [9usize, 8, 7];
        let f = |idx: &[usize]| {
            ((idx[0] + 2 * idx[1]) as f64).sin() + (idx[2] as f64 * 0.3).cos()
        };
        let opts = CrossOptions { tol: 1e-9, ..CrossOptions::default() };
        let a = tt_cross(&modes, f, &opts).unwrap();
        let b = tt_cross(&modes, f, &opts).unwrap();
        assert_eq!(a.cores(), b.cores());
    }

    #[test]
    fn rank_starved_cross_is_rejected() {
        // A pseudo-random tensor has no low-rank structure; with the rank cap
        // at 2 the sampled error cannot reach the budget.
        let modes = [10usize, 10, 10];
        let f = |idx: &[usize]| {
            let h = idx[0]
                .wrapping_mul(2_654_435_761)
                .wrapping_add(idx[1].wrapping_mul(974_634_361))
                .wrapping_add(idx[2].wrapping_mul(461_845_907));
            ((h >> 7) % 1000) as f64 / 1000.0
        };
        let opts = CrossOptions {
            tol: 1e-10,
            max_rank: 2,
            max_sweeps: 2,
            ..CrossOptions::default()
        };
        match tt_cross(&modes, f, &opts) {
            Err(TtError::CrossVerification { error, budget }) => {
                assert!(error > budget);
            }
            other => panic!("expected verification failure, got {:?}", other.map(|t| t.ranks())),
        }
    }
}

#[cfg(test)]
mod pivot_tests {
    use super::*;

    #[test]
    fn maxvol_interpolation_identity() {
        // Random-ish tall matrix; check B = U * U[S]^{-1} has identity rows
        // at S and reproduces U from the selected rows.
        let m = 9usize;
        let r = 4usize;
        let mut u = vec![0.0; m * r];
        for i in 0..m {
            for j in 0..r {
                u[i * r + j] = ((i * 7 + j * 3 + 1) as f64).sin() + 0.1 * (i as f64);
            }
        }
        let (sel, b) = maxvol(&u, m, r);
        // identity rows
        for (a, &s) in sel.iter().enumerate() {
            for j in 0..r {
                let expect = if j == a { 1.0 } else { 0.0 };
                assert!((b[s * r + j] - expect).abs() < 1e-8, "B[{s},{j}] = {}", b[s * r + j]);
            }
        }
        // B * U[sel] == U
        for i in 0..m {
            for j in 0..r {
                let mut acc = 0.0;
                for a in 0..r {
                    acc += b[i * r + a] * u[sel[a] * r + j];
                }
                assert!((acc - u[i * r + j]).abs() < 1e-8, "row {i} col {j}: {acc} vs {}", u[i * r + j]);
            }
        }
    }

    #[test]
    fn full_sampling_is_exact_2d() {
        let modes = [4usize, 5];
        let f = |idx: &[usize]| 1.0 / (1.0 + idx[0] as f64 + 2.0 * idx[1] as f64);
        let opts = CrossOptions { tol: 1e-12, initial_rank: 5, kick_rank: 0, max_rank: 10, max_sweeps: 1, verify_samples: 100, ..CrossOptions::default() };
        let tt = tt_cross(&modes, f, &opts).expect("2d full cross");
        for i in 0..4 {
            for j in 0..5 {
                let got = tt.eval(&[i, j]);
                let want = f(&[i, j]);
                assert!((got - want).abs() < 1e-9, "entry ({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn full_sampling_is_exact_3d() {
        let modes = [3usize, 3, 3];
        let f = |idx: &[usize]| 1.0 / (1.0 + idx[0] as f64 + 2.0 * idx[1] as f64 + 3.0 * idx[2] as f64);
        let opts = CrossOptions { tol: 1e-12, initial_rank: 9, kick_rank: 0, max_rank: 10, max_sweeps: 1, verify_samples: 100, ..CrossOptions::default() };
        let tt = tt_cross(&modes, f, &opts).expect("3d full cross");
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let got = tt.eval(&[i, j, k]);
                    let want = f(&[i, j, k]);
                    assert!((got - want).abs() < 1e-9, "({i},{j},{k}): {got} vs {want}");
                }
            }
        }
    }
}

