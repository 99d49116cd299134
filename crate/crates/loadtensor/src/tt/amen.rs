//! Alternating linear solver for TT systems with residual-based rank
//! enrichment (AMEN-style).
//!
//! One sweep walks left to right through the solution cores. At each site the
//! operator and right-hand side are projected onto the frame spanned by the
//! fixed neighbouring cores, the resulting local linear system is solved
//! (dense LU below a size threshold, restarted GMRES above it), and the core
//! basis is enriched with a low-rank projection of the global residual so
//! ranks can grow where the current approximation is poor. Between sweeps the
//! solution is re-orthogonalized from the right.
//!
//! Convergence is monitored through the largest relative local residual seen
//! before each site solve; at the fixed point this quantity vanishes together
//! with the true residual. The recorded history is the running minimum, so it
//! is non-increasing by construction. When the final operator-times-solution
//! rank is small enough the exact relative residual is computed and reported
//! instead of the estimate.

use super::round::{right_orthogonalize, tt_round};
use super::{matmul, Core3, Core4, TtError, TtMatrix, TtVector};
use nalgebra::{DMatrix, DVector};

/// Tuning knobs for [`amen_solve`].
#[derive(Debug, Clone)]
pub struct AmenOptions {
    /// Target relative residual.
    pub tol: f64,
    /// Maximum number of full sweeps.
    pub max_sweeps: usize,
    /// Hard cap on solution bond ranks.
    pub max_rank: usize,
    /// Rank of the residual approximation used for basis enrichment.
    pub kick_rank: usize,
    /// Local systems up to this size are solved by dense LU; larger ones by
    /// restarted GMRES.
    pub local_dense_max: usize,
    /// GMRES restart length for large local systems.
    pub gmres_restart: usize,
    /// GMRES total iteration cap per local solve.
    pub gmres_max_iter: usize,
}

impl Default for AmenOptions {
    fn default() -> Self {
        AmenOptions {
            tol: 1e-8,
            max_sweeps: 20,
            max_rank: 60,
            kick_rank: 4,
            local_dense_max: 1200,
            gmres_restart: 60,
            gmres_max_iter: 400,
        }
    }
}

/// Outcome summary of an [`amen_solve`] run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Whether the monitored residual reached the tolerance.
    pub converged: bool,
    /// Number of sweeps performed.
    pub sweeps: usize,
    /// Best monitored relative residual after each sweep (non-increasing).
    pub residuals: Vec<f64>,
    /// Final relative residual; exact when cheap to certify, otherwise the
    /// monitored estimate (see `residual_is_estimate`).
    pub final_residual: f64,
    /// True when `final_residual` is the sweep estimate rather than an exact
    /// evaluation of `||b - Ax|| / ||b||`.
    pub residual_is_estimate: bool,
    /// True when the rank cap prevented further enrichment at least once.
    pub max_rank_reached: bool,
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// `w` rearranged from `(C, n, n2, C2)` to a `(n*C2) x (C*n2)` matrix.
fn permute_op(w: &Core4) -> Vec<f64> {
    let (c_dim, n, n2, c2_dim) = (w.r_left, w.n_out, w.n_in, w.r_right);
    let mut out = vec![0.0; n * c2_dim * c_dim * n2];
    for c in 0..c_dim {
        for i in 0..n {
            for j in 0..n2 {
                for c2 in 0..c2_dim {
                    out[(i * c2_dim + c2) * (c_dim * n2) + c * n2 + j] =
                        w.data[((c * n + i) * n2 + j) * c2_dim + c2];
                }
            }
        }
    }
    out
}

/// Extends a left operator environment by one site.
///
/// `phi` has shape `(A, C, B)`: test-frame rank, operator rank, trial-frame
/// rank. `xt` is the test core, `xr` the trial core. Returns `(A2, C2, B2)`.
fn phi_update_left(phi: &[f64], xt: &Core3, w: &Core4, xr: &Core3) -> Vec<f64> {
    let (a_dim, a2) = (xt.r_left, xt.r_right);
    let (c_dim, c2) = (w.r_left, w.r_right);
    let (b_dim, b2) = (xr.r_left, xr.r_right);
    let (n, n2) = (w.n_out, w.n_in);
    debug_assert_eq!(phi.len(), a_dim * c_dim * b_dim);
    debug_assert_eq!(xt.n, n);
    debug_assert_eq!(xr.n, n2);
    // t1(a, c, j, b2) = sum_b phi(a, c, b) xr(b, j, b2)
    let t1 = matmul(phi, a_dim * c_dim, b_dim, &xr.data, n2 * b2);
    // t1_perm: (C*n2) x (A*B2)
    let mut t1_perm = vec![0.0; c_dim * n2 * a_dim * b2];
    for a in 0..a_dim {
        for c in 0..c_dim {
            for j in 0..n2 {
                for bb in 0..b2 {
                    t1_perm[(c * n2 + j) * (a_dim * b2) + a * b2 + bb] =
                        t1[(a * c_dim + c) * (n2 * b2) + j * b2 + bb];
                }
            }
        }
    }
    // t2(i, c2, a, b2)
    let w_perm = permute_op(w);
    let t2 = matmul(&w_perm, n * c2, c_dim * n2, &t1_perm, a_dim * b2);
    // t2q: (A*n) x (C2*B2)
    let mut t2q = vec![0.0; a_dim * n * c2 * b2];
    for i in 0..n {
        for cc in 0..c2 {
            for a in 0..a_dim {
                for bb in 0..b2 {
                    t2q[(a * n + i) * (c2 * b2) + cc * b2 + bb] =
                        t2[(i * c2 + cc) * (a_dim * b2) + a * b2 + bb];
                }
            }
        }
    }
    // out(a2, c2, b2) = sum_{a,i} xt(a, i, a2) t2q(a, i, c2, b2)
    let xt_t = transpose(&xt.data, a_dim * n, a2);
    matmul(&xt_t, a2, a_dim * n, &t2q, c2 * b2)
}

/// Extends a right operator environment by one site (mirror image of
/// [`phi_update_left`]). `phi` has shape `(A2, C2, B2)`, output `(A, C, B)`.
fn phi_update_right(phi: &[f64], xt: &Core3, w: &Core4, xr: &Core3) -> Vec<f64> {
    let (a_dim, a2) = (xt.r_left, xt.r_right);
    let (c_dim, c2) = (w.r_left, w.r_right);
    let (b_dim, b2) = (xr.r_left, xr.r_right);
    let (n, n2) = (w.n_out, w.n_in);
    debug_assert_eq!(phi.len(), a2 * c2 * b2);
    // phi_perm: B2 x (A2*C2)
    let mut phi_perm = vec![0.0; phi.len()];
    for aa in 0..a2 {
        for cc in 0..c2 {
            for bb in 0..b2 {
                phi_perm[bb * (a2 * c2) + aa * c2 + cc] = phi[(aa * c2 + cc) * b2 + bb];
            }
        }
    }
    // t1(b, j, a2, c2)
    let t1 = matmul(&xr.data, b_dim * n2, b2, &phi_perm, a2 * c2);
    // t1_perm: (n2*C2) x (B*A2)
    let mut t1_perm = vec![0.0; n2 * c2 * b_dim * a2];
    for b in 0..b_dim {
        for j in 0..n2 {
            for aa in 0..a2 {
                for cc in 0..c2 {
                    t1_perm[(j * c2 + cc) * (b_dim * a2) + b * a2 + aa] =
                        t1[(b * n2 + j) * (a2 * c2) + aa * c2 + cc];
                }
            }
        }
    }
    // t2(c, i, b, a2) via the natural (C*n) x (n2*C2) unfolding of w.
    let t2 = matmul(&w.data, c_dim * n, n2 * c2, &t1_perm, b_dim * a2);
    // t2_perm: (n*A2) x (C*B)
    let mut t2_perm = vec![0.0; n * a2 * c_dim * b_dim];
    for c in 0..c_dim {
        for i in 0..n {
            for b in 0..b_dim {
                for aa in 0..a2 {
                    t2_perm[(i * a2 + aa) * (c_dim * b_dim) + c * b_dim + b] =
                        t2[(c * n + i) * (b_dim * a2) + b * a2 + aa];
                }
            }
        }
    }
    // out(a, c, b) = sum_{i,a2} xt(a, i, a2) t2_perm(i, a2, c, b)
    matmul(&xt.data, a_dim, n * a2, &t2_perm, c_dim * b_dim)
}

/// Extends a left right-hand-side environment `(A, D)` by one site.
fn psi_update_left(psi: &[f64], xt: &Core3, bc: &Core3) -> Vec<f64> {
    let (a_dim, a2) = (xt.r_left, xt.r_right);
    let (d_dim, d2) = (bc.r_left, bc.r_right);
    let n = xt.n;
    debug_assert_eq!(bc.n, n);
    debug_assert_eq!(psi.len(), a_dim * d_dim);
    let psi_t = transpose(psi, a_dim, d_dim);
    // t1(d, i, a2)
    let t1 = matmul(&psi_t, d_dim, a_dim, &xt.data, n * a2);
    // out0(d2, a2) = sum_{d,i} bc(d, i, d2) t1(d, i, a2)
    let b_t = transpose(&bc.data, d_dim * n, d2);
    let out0 = matmul(&b_t, d2, d_dim * n, &t1, a2);
    transpose(&out0, d2, a2)
}

/// Extends a right right-hand-side environment `(A2, D2)` by one site.
fn psi_update_right(psi: &[f64], xt: &Core3, bc: &Core3) -> Vec<f64> {
    let (a_dim, a2) = (xt.r_left, xt.r_right);
    let (d_dim, d2) = (bc.r_left, bc.r_right);
    let n = xt.n;
    debug_assert_eq!(psi.len(), a2 * d2);
    let psi_t = transpose(psi, a2, d2);
    // t1(d, i, a2)
    let t1 = matmul(&bc.data, d_dim * n, d2, &psi_t, a2);
    // t1_perm: (n*A2) x D
    let mut t1_perm = vec![0.0; n * a2 * d_dim];
    for d in 0..d_dim {
        for i in 0..n {
            for aa in 0..a2 {
                t1_perm[(i * a2 + aa) * d_dim + d] = t1[(d * n + i) * a2 + aa];
            }
        }
    }
    matmul(&xt.data, a_dim, n * a2, &t1_perm, d_dim)
}

/// Projects the right-hand side onto the local frame: output `(A, n, A2)`.
fn local_rhs(psi_l: &[f64], bc: &Core3, psi_r: &[f64]) -> Vec<f64> {
    let (d_dim, d2) = (bc.r_left, bc.r_right);
    let n = bc.n;
    let a_dim = psi_l.len() / d_dim;
    let a2 = psi_r.len() / d2;
    // t1(a, i, d2)
    let t1 = matmul(psi_l, a_dim, d_dim, &bc.data, n * d2);
    let psi_r_t = transpose(psi_r, a2, d2);
    matmul(&t1, a_dim * n, d2, &psi_r_t, a2)
}

/// Applies the locally projected operator to a core-shaped vector.
///
/// `phi_l` has shape `(AL, C, BL)`, `phi_r` `(AR, C2, BR)`, `v` `(BL, n2, BR)`;
/// the result has shape `(AL, n, AR)`.
#[allow(clippy::too_many_arguments)]
fn local_matvec_shaped(
    phi_l: &[f64],
    al: usize,
    bl: usize,
    w: &Core4,
    phi_r: &[f64],
    ar: usize,
    br: usize,
    v: &[f64],
) -> Vec<f64> {
    let (c_dim, c2) = (w.r_left, w.r_right);
    let (n, n2) = (w.n_out, w.n_in);
    debug_assert_eq!(phi_l.len(), al * c_dim * bl);
    debug_assert_eq!(phi_r.len(), ar * c2 * br);
    debug_assert_eq!(v.len(), bl * n2 * br);
    // t1(a, c, j, br)
    let t1 = matmul(phi_l, al * c_dim, bl, v, n2 * br);
    // t1_perm: (C*n2) x (AL*BR)
    let mut t1_perm = vec![0.0; c_dim * n2 * al * br];
    for a in 0..al {
        for c in 0..c_dim {
            for j in 0..n2 {
                for bb in 0..br {
                    t1_perm[(c * n2 + j) * (al * br) + a * br + bb] =
                        t1[(a * c_dim + c) * (n2 * br) + j * br + bb];
                }
            }
        }
    }
    let w_perm = permute_op(w);
    // t2(i, c2, a, br)
    let t2 = matmul(&w_perm, n * c2, c_dim * n2, &t1_perm, al * br);
    // t2_perm: (C2*BR) x (AL*n)
    let mut t2_perm = vec![0.0; c2 * br * al * n];
    for i in 0..n {
        for cc in 0..c2 {
            for a in 0..al {
                for bb in 0..br {
                    t2_perm[(cc * br + bb) * (al * n) + a * n + i] =
                        t2[(i * c2 + cc) * (al * br) + a * br + bb];
                }
            }
        }
    }
    // out0(ar, a, i)
    let out0 = matmul(phi_r, ar, c2 * br, &t2_perm, al * n);
    transpose(&out0, ar, al * n)
}

/// Dense assembly of the locally projected operator:
/// `(AL*n*AR) x (BL*n2*BR)`, row-major.
fn local_dense(phi_l: &[f64], al: usize, bl: usize, w: &Core4, phi_r: &[f64], ar: usize, br: usize) -> Vec<f64> {
    let (c_dim, c2) = (w.r_left, w.r_right);
    let (n, n2) = (w.n_out, w.n_in);
    let m_out = al * n * ar;
    let m_in = bl * n2 * br;
    let mut out = vec![0.0; m_out * m_in];
    for c in 0..c_dim {
        for cc in 0..c2 {
            for i in 0..n {
                for j in 0..n2 {
                    let wv = w.data[((c * n + i) * n2 + j) * c2 + cc];
                    if wv == 0.0 {
                        continue;
                    }
                    for a in 0..al {
                        for b in 0..bl {
                            let pl = phi_l[(a * c_dim + c) * bl + b];
                            if pl == 0.0 {
                                continue;
                            }
                            let plw = pl * wv;
                            let row_base = (a * n + i) * ar;
                            let col_base = (b * n2 + j) * br;
                            for aa in 0..ar {
                                let pr_base = (aa * c2 + cc) * br;
                                let orow = (row_base + aa) * m_in + col_base;
                                for bb in 0..br {
                                    out[orow + bb] += plw * phi_r[pr_base + bb];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Restarted GMRES with modified Gram-Schmidt, used for local systems too
/// large for dense factorization. Returns the best iterate found.
fn gmres<F: Fn(&[f64]) -> Vec<f64>>(
    apply: F,
    b: &[f64],
    x0: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Vec<f64> {
    let m = b.len();
    let bnorm = vec_norm(b).max(1e-300);
    let mut x = x0.to_vec();
    let mut used = 0usize;
    loop {
        let ax = apply(&x);
        let mut r = vec![0.0; m];
        for i in 0..m {
            r[i] = b[i] - ax[i];
        }
        let beta = vec_norm(&r);
        if beta <= rel_tol * bnorm || used >= max_iter {
            return x;
        }
        let k_max = restart.min(max_iter - used).min(m);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k_max + 1);
        for item in r.iter_mut() {
            *item /= beta;
        }
        basis.push(r);
        let mut h = vec![0.0; (k_max + 1) * k_max];
        let mut cs = vec![0.0; k_max];
        let mut sn = vec![0.0; k_max];
        let mut g = vec![0.0; k_max + 1];
        g[0] = beta;
        let mut cols = 0usize;
        for j in 0..k_max {
            let mut w = apply(&basis[j]);
            used += 1;
            for i in 0..=j {
                let hij: f64 = w.iter().zip(&basis[i]).map(|(a, b)| a * b).sum();
                h[i * k_max + j] = hij;
                for (wv, bv) in w.iter_mut().zip(&basis[i]) {
                    *wv -= hij * bv;
                }
            }
            let hnext = vec_norm(&w);
            h[(j + 1) * k_max + j] = hnext;
            // Apply accumulated Givens rotations to the new column.
            for i in 0..j {
                let t = cs[i] * h[i * k_max + j] + sn[i] * h[(i + 1) * k_max + j];
                h[(i + 1) * k_max + j] = -sn[i] * h[i * k_max + j] + cs[i] * h[(i + 1) * k_max + j];
                h[i * k_max + j] = t;
            }
            let denom = (h[j * k_max + j].powi(2) + hnext * hnext).sqrt().max(1e-300);
            cs[j] = h[j * k_max + j] / denom;
            sn[j] = hnext / denom;
            h[j * k_max + j] = denom;
            h[(j + 1) * k_max + j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            cols = j + 1;
            let breakdown = hnext <= 1e-14 * bnorm;
            if !breakdown {
                for item in w.iter_mut() {
                    *item /= hnext;
                }
                basis.push(w);
            }
            if g[j + 1].abs() <= rel_tol * bnorm || breakdown || j + 1 == k_max {
                break;
            }
        }
        // Back-substitution for the small triangular system.
        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut s = g[i];
            for l in i + 1..cols {
                s -= h[i * k_max + l] * y[l];
            }
            y[i] = if h[i * k_max + i].abs() > 1e-300 { s / h[i * k_max + i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            if *yj != 0.0 {
                for (xv, bv) in x.iter_mut().zip(&basis[j]) {
                    *xv += yj * bv;
                }
            }
        }
        if used >= max_iter {
            return x;
        }
    }
}

/// QR-orthogonalizes the column space of a core's left unfolding.
/// Returns the new core and the `(r_new, r_right)` carry factor.
fn left_orthogonalize_core(core: &Core3) -> (Core3, Vec<f64>, usize) {
    let (rl, n, rr) = (core.r_left, core.n, core.r_right);
    let m = super::dense::row_major_to_dmatrix(&core.data, rl * n, rr);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    let rnew = q.ncols();
    let qdata = super::dense::dmatrix_to_row_major(&q);
    let rdata = super::dense::dmatrix_to_row_major(&r);
    (Core3 { r_left: rl, n, r_right: rnew, data: qdata }, rdata, rnew)
}

/// Solves `A x = b` in TT format by alternating local solves with residual
/// enrichment. Deterministic: the same inputs produce the same output.
pub fn amen_solve(
    a: &TtMatrix,
    b: &TtVector,
    x0: Option<&TtVector>,
    opts: &AmenOptions,
) -> Result<(TtVector, SolveReport), TtError> {
    let k_dims = a.ndims();
    if b.ndims() != k_dims || a.row_modes() != b.modes() || a.row_modes() != a.col_modes() {
        return Err(TtError::ModeMismatch(a.row_modes(), b.modes()));
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        let x = TtVector::constant(&b.modes(), 0.0)?;
        let report = SolveReport {
            converged: true,
            sweeps: 0,
            residuals: vec![0.0],
            final_residual: 0.0,
            residual_is_estimate: false,
            max_rank_reached: false,
        };
        return Ok((x, report));
    }

    let mut x = match x0 {
        Some(v) => {
            if v.modes() != b.modes() {
                return Err(TtError::ModeMismatch(v.modes(), b.modes()));
            }
            tt_round(v, opts.tol * 1e-3, opts.max_rank)?
        }
        None => tt_round(b, opts.tol * 1e-3, opts.max_rank)?,
    };
    right_orthogonalize(&mut x.cores);

    // Residual approximation for enrichment.
    let mut z = {
        let ax = a.matvec(&x)?;
        let res = b.add(&ax.scaled(-1.0))?;
        let mut z = tt_round(&res, opts.tol, opts.kick_rank.max(1))?;
        if z.norm() == 0.0 {
            z = TtVector::constant(&b.modes(), 1.0)?;
        }
        right_orthogonalize(&mut z.cores);
        z
    };

    let mut residuals: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    let mut converged = false;
    let mut max_rank_reached = false;
    let mut stagnated = false;
    let mut sweeps = 0usize;

    for sweep in 0..opts.max_sweeps {
        sweeps = sweep + 1;
        // Right environments from the current (right-orthogonal) cores.
        let mut phi_r: Vec<Vec<f64>> = vec![Vec::new(); k_dims];
        let mut psi_r: Vec<Vec<f64>> = vec![Vec::new(); k_dims];
        let mut phiz_r: Vec<Vec<f64>> = vec![Vec::new(); k_dims];
        let mut psiz_r: Vec<Vec<f64>> = vec![Vec::new(); k_dims];
        phi_r[k_dims - 1] = vec![1.0];
        psi_r[k_dims - 1] = vec![1.0];
        phiz_r[k_dims - 1] = vec![1.0];
        psiz_r[k_dims - 1] = vec![1.0];
        for k in (1..k_dims).rev() {
            phi_r[k - 1] = phi_update_right(&phi_r[k], &x.cores[k], a.core(k), &x.cores[k]);
            psi_r[k - 1] = psi_update_right(&psi_r[k], &x.cores[k], b.core(k));
            phiz_r[k - 1] = phi_update_right(&phiz_r[k], &z.cores[k], a.core(k), &x.cores[k]);
            psiz_r[k - 1] = psi_update_right(&psiz_r[k], &z.cores[k], b.core(k));
        }

        let mut phi_l: Vec<f64> = vec![1.0];
        let mut psi_l: Vec<f64> = vec![1.0];
        let mut phiz_l: Vec<f64> = vec![1.0];
        let mut psiz_l: Vec<f64> = vec![1.0];
        let mut sweep_res: f64 = 0.0;

        for k in 0..k_dims {
            let w = a.core(k);
            let bc = b.core(k);
            let (al, n, ar) = (x.cores[k].r_left, x.cores[k].n, x.cores[k].r_right);
            let rhs = local_rhs(&psi_l, bc, &psi_r[k]);
            let rhs_norm = vec_norm(&rhs);
            // Pre-solve local residual: how far the incoming core is from
            // satisfying the projected equations.
            let ax_cur =
                local_matvec_shaped(&phi_l, al, al, w, &phi_r[k], ar, ar, &x.cores[k].data);
            let mut pre = 0.0f64;
            for i in 0..rhs.len() {
                let d = rhs[i] - ax_cur[i];
                pre += d * d;
            }
            let pre = pre.sqrt() / rhs_norm.max(1e-12 * b_norm);
            sweep_res = sweep_res.max(pre);

            let m_size = al * n * ar;
            let u = if m_size <= opts.local_dense_max {
                let dense = local_dense(&phi_l, al, al, w, &phi_r[k], ar, ar);
                let mat = DMatrix::from_row_slice(m_size, m_size, &dense);
                let rhs_v = DVector::from_column_slice(&rhs);
                match mat.lu().solve(&rhs_v) {
                    Some(sol) => sol.as_slice().to_vec(),
                    None => super::svd::pseudo_solve(&dense, m_size, &rhs, 1, 1e-13)
                        .ok_or(TtError::SingularLocalSystem(k))?,
                }
            } else {
                let apply = |v: &[f64]| local_matvec_shaped(&phi_l, al, al, w, &phi_r[k], ar, ar, v);
                gmres(
                    apply,
                    &rhs,
                    &x.cores[k].data,
                    (opts.tol * 0.1).max(1e-14),
                    opts.gmres_restart,
                    opts.gmres_max_iter,
                )
            };

            if k + 1 == k_dims {
                x.cores[k] = Core3 { r_left: al, n, r_right: ar, data: u };
                break;
            }

            let ucore = Core3 { r_left: al, n, r_right: ar, data: u };

            // Residual core in the z frame and its mixed-frame projection
            // used for enrichment.
            let (zl, zr) = (z.cores[k].r_left, z.cores[k].r_right);
            let z_rhs = local_rhs(&psiz_l, bc, &psiz_r[k]);
            let z_ax = local_matvec_shaped(&phiz_l, zl, al, w, &phiz_r[k], zr, ar, &ucore.data);
            let mut z_loc = vec![0.0; z_rhs.len()];
            for i in 0..z_rhs.len() {
                z_loc[i] = z_rhs[i] - z_ax[i];
            }
            let kick_rhs = local_rhs(&psi_l, bc, &psiz_r[k]);
            let kick_ax = local_matvec_shaped(&phi_l, al, al, w, &phiz_r[k], zr, ar, &ucore.data);
            let mut kick = vec![0.0; kick_rhs.len()];
            for i in 0..kick_rhs.len() {
                kick[i] = kick_rhs[i] - kick_ax[i];
            }

            // How many enrichment directions fit under the rank cap.
            let room = opts.max_rank.saturating_sub(ar);
            let e = room.min(zr);
            if e < zr && pre > opts.tol {
                max_rank_reached = true;
            }
            // Extended core [u | kick_cols] of shape (al, n, ar + e).
            let mut ext = vec![0.0; al * n * (ar + e)];
            for row in 0..al * n {
                ext[row * (ar + e)..row * (ar + e) + ar]
                    .copy_from_slice(&ucore.data[row * ar..(row + 1) * ar]);
                for col in 0..e {
                    ext[row * (ar + e) + ar + col] = kick[row * zr + col];
                }
            }
            let ext_core = Core3 { r_left: al, n, r_right: ar + e, data: ext };
            let (qcore, rfac, rnew) = left_orthogonalize_core(&ext_core);
            // Pad the next core with zero rows for the enrichment block and
            // absorb the carry factor.
            let next = &x.cores[k + 1];
            let (n2, r2) = (next.n, next.r_right);
            let mut padded = vec![0.0; (ar + e) * n2 * r2];
            padded[..ar * n2 * r2].copy_from_slice(&next.data);
            let merged = matmul(&rfac, rnew, ar + e, &padded, n2 * r2);
            x.cores[k] = qcore;
            x.cores[k + 1] = Core3 { r_left: rnew, n: n2, r_right: r2, data: merged };

            // Advance the z core: orthogonalized local residual.
            let z_core = Core3 { r_left: zl, n, r_right: zr, data: z_loc };
            let (zq, zr_fac, zrnew) = left_orthogonalize_core(&z_core);
            let znext = &z.cores[k + 1];
            let merged_z = matmul(&zr_fac, zrnew, zr, &znext.data, znext.n * znext.r_right);
            let zn_next =
                Core3 { r_left: zrnew, n: znext.n, r_right: znext.r_right, data: merged_z };
            z.cores[k] = zq;
            z.cores[k + 1] = zn_next;

            // Advance left environments with the updated cores.
            phi_l = phi_update_left(&phi_l, &x.cores[k], w, &x.cores[k]);
            psi_l = psi_update_left(&psi_l, &x.cores[k], bc);
            phiz_l = phi_update_left(&phiz_l, &z.cores[k], w, &x.cores[k]);
            psiz_l = psi_update_left(&psiz_l, &z.cores[k], bc);
        }

        best = best.min(sweep_res);
        residuals.push(best);
        if sweep_res <= opts.tol {
            converged = true;
            break;
        }
        // A residual plateau far above the target means the system has an
        // unreachable floor (singular operator or rank starvation). Stop
        // burning sweeps; the caller decides what the partial solve is worth.
        let s = residuals.len();
        if s >= 3 && residuals[s - 1] > 0.98 * residuals[s - 3] && best > 100.0 * opts.tol {
            stagnated = true;
            break;
        }
        right_orthogonalize(&mut x.cores);
        right_orthogonalize(&mut z.cores);
    }

    // Certify the residual exactly when the operator-times-solution rank is
    // small enough to afford the inner products.
    let apply_rank = a.max_rank() * x.max_rank();
    let (final_residual, residual_is_estimate) = if apply_rank <= 220 {
        let ax = a.matvec(&x)?;
        let diff = b.add(&ax.scaled(-1.0))?;
        let exact = diff.norm() / b_norm;
        (exact, false)
    } else {
        (best, true)
    };
    if final_residual <= opts.tol {
        converged = true;
    }

    if !converged && (max_rank_reached || stagnated) && final_residual > 100.0 * opts.tol {
        return Err(TtError::SolveStalled {
            residual: final_residual,
            max_rank: opts.max_rank,
        });
    }

    let report = SolveReport {
        converged,
        sweeps,
        residuals,
        final_residual,
        residual_is_estimate,
        max_rank_reached,
    };
    Ok((x, report))
}
