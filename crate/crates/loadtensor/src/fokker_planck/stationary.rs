//! Stationary density via shifted inverse power iteration.
//!
//! The generator conserves mass, so zero is an exact eigenvalue and the
//! stationary density is its eigenvector. Each iteration solves
//! `(A - shift*I) y = p` and renormalizes; with a shift at (or near) zero a
//! single solve amplifies the kernel component enormously, so the iteration
//! typically settles in a handful of steps.
//!
//! Parameter axes make the kernel degenerate: the operator is block-diagonal
//! across parameter slices and every slice contributes one zero eigenvalue,
//! so the parameter marginal of "the" stationary density is a gauge choice
//! that finite-precision solves would otherwise fill with noise. The solver
//! pins the gauge by flattening the parameter marginal to uniform (the
//! uninformative prior); measurement weighting is applied downstream.

use super::{FpError, FpOperator};
use crate::grid::DiscretizedDomain;
use crate::tt::{
    tt_from_dense, tt_round, tt_to_dense, AmenOptions, Core3, DenseTensor, TtError, TtMatrix,
    TtVector,
};

#[derive(Debug, Clone)]
pub struct StationarySolveConfig {
    /// Inverse-iteration shift; 0 solves the singular system directly and
    /// relies on the solver's own regularization.
    pub shift: f64,
    /// Shift retried when the solver reports a (near-)singular system.
    pub fallback_shift: f64,
    /// Convergence tolerance: relative change of the eigenvalue estimate
    /// (in units of the operator's RMS row scale) or of the density.
    pub tol: f64,
    /// Acceptable bound on `||A p|| / ||p||` for the returned density.
    pub residual_bound: f64,
    pub max_iters: usize,
    /// Rank cap for the density between iterations.
    pub max_rank: usize,
    /// Rounding tolerance for the density between iterations.
    pub round_tol: f64,
    /// Pin the parameter marginal to uniform (gauge fix, see module docs).
    pub flatten_parameter_marginal: bool,
    /// Densities up to this many entries are clamped exactly (negative
    /// entries zeroed); larger ones are left to downstream marginal clamps.
    pub clamp_dense_threshold: usize,
    pub amen: AmenOptions,
}

impl Default for StationarySolveConfig {
    fn default() -> Self {
        StationarySolveConfig {
            shift: 0.0,
            fallback_shift: -1e-8,
            tol: 1e-8,
            residual_bound: 1e-6,
            max_iters: 40,
            max_rank: 100,
            round_tol: 1e-10,
            flatten_parameter_marginal: true,
            clamp_dense_threshold: 200_000,
            amen: AmenOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryIteration {
    pub eigenvalue: f64,
    /// Upper bound on `||A p|| / ||p||` for this iterate.
    pub residual_bound: f64,
    /// Relative change `||p_k - p_{k-1}|| / ||p_{k-1}||`.
    pub density_delta: f64,
    pub max_rank: usize,
    pub amen_converged: bool,
}

#[derive(Debug, Clone)]
pub struct StationaryReport {
    pub iterations: Vec<StationaryIteration>,
    pub converged: bool,
    pub eigenvalue: f64,
    pub residual_bound: f64,
    /// False when the bound leans on an estimated (not exactly computed)
    /// solver residual.
    pub residual_is_certified: bool,
    pub shift_used: f64,
    pub flattened: bool,
    pub clamped: bool,
}

/// Midpoint quadrature weights, one constant vector per axis.
pub(crate) fn quadrature_weights(domain: &DiscretizedDomain) -> Vec<Vec<f64>> {
    (0..domain.ndims()).map(|d| vec![domain.step(d); domain.spec(d).count]).collect()
}

/// Midpoint-rule integral of a grid field.
pub(crate) fn integral(domain: &DiscretizedDomain, p: &TtVector) -> Result<f64, TtError> {
    p.weighted_sum(&quadrature_weights(domain))
}

/// Contracts all state axes with midpoint weights, leaving an (unnormalized)
/// tensor over the parameter axes only.
fn parameter_mass(domain: &DiscretizedDomain, p: &TtVector) -> Result<TtVector, TtError> {
    let n_state = domain.n_state_dims();
    debug_assert!(n_state < domain.ndims());
    let mut carry = vec![1.0]; // row vector, 1 x r
    for d in 0..n_state {
        let c = p.core(d);
        let mut collapsed = vec![0.0; c.r_left * c.r_right];
        for a in 0..c.r_left {
            for i in 0..c.n {
                for b in 0..c.r_right {
                    collapsed[a * c.r_right + b] += c.at(a, i, b);
                }
            }
        }
        for v in &mut collapsed {
            *v *= domain.step(d);
        }
        carry = crate::tt::matmul(&carry, 1, c.r_left, &collapsed, c.r_right);
    }
    let mut cores = Vec::with_capacity(domain.ndims() - n_state);
    let first = p.core(n_state);
    let mut data = vec![0.0; first.n * first.r_right];
    for i in 0..first.n {
        for b in 0..first.r_right {
            let mut acc = 0.0;
            for a in 0..first.r_left {
                acc += carry[a] * first.at(a, i, b);
            }
            data[i * first.r_right + b] = acc;
        }
    }
    cores.push(Core3 { r_left: 1, n: first.n, r_right: first.r_right, data });
    for d in n_state + 1..domain.ndims() {
        cores.push(p.core(d).clone());
    }
    TtVector::from_cores(cores)
}

/// Rescales every parameter slice to carry equal mass. Exact for parameter
/// spaces that fit densely; cross-approximated otherwise.
fn flatten_parameter_marginal(
    domain: &DiscretizedDomain,
    p: &TtVector,
    cfg: &StationarySolveConfig,
) -> Result<TtVector, FpError> {
    let n_state = domain.n_state_dims();
    if n_state == domain.ndims() {
        return Ok(p.clone());
    }
    let mass = parameter_mass(domain, p)?;
    let param_total: usize = domain.mode_sizes()[n_state..].iter().product();
    let recip = if param_total <= 1 << 16 {
        let dense = tt_to_dense(&mass)?;
        let peak = dense.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Err(FpError::DegenerateDensity);
        }
        // Slices with (numerically) no mass stay at zero instead of blowing
        // up; they carry no information either way.
        let data = dense
            .data
            .iter()
            .map(|&v| if v.abs() > 1e-13 * peak { 1.0 / v } else { 0.0 })
            .collect();
        tt_from_dense(&DenseTensor::new(dense.modes.clone(), data)?, 1e-14, usize::MAX)?
    } else {
        let modes: Vec<usize> = domain.mode_sizes()[n_state..].to_vec();
        let opts = crate::tt::CrossOptions {
            tol: cfg.round_tol.max(1e-12),
            max_rank: cfg.max_rank,
            ..crate::tt::CrossOptions::default()
        };
        crate::tt::tt_cross(&modes, |idx| 1.0 / mass.eval(idx), &opts)?
    };
    // Extend over the state axes with constant-one cores.
    let mut cores: Vec<Core3> = (0..n_state)
        .map(|d| Core3 {
            r_left: 1,
            n: domain.spec(d).count,
            r_right: 1,
            data: vec![1.0; domain.spec(d).count],
        })
        .collect();
    cores.extend(recip.cores().iter().cloned());
    let recip_full = TtVector::from_cores(cores)?;
    Ok(tt_round(&p.hadamard(&recip_full)?, cfg.round_tol, cfg.max_rank)?)
}

/// Zeroes negative entries exactly (dense path); returns the input untouched
/// when the grid is too large for a dense pass.
fn clamp_density(
    domain: &DiscretizedDomain,
    p: &TtVector,
    cfg: &StationarySolveConfig,
) -> Result<(TtVector, bool), FpError> {
    if domain.total_nodes() > cfg.clamp_dense_threshold {
        log::debug!("density clamp skipped: {} nodes exceed the dense budget", domain.total_nodes());
        return Ok((p.clone(), false));
    }
    let dense = tt_to_dense(p)?;
    let max = dense.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let min = dense.data.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if min >= 0.0 {
        return Ok((p.clone(), false));
    }
    if min < -1e-6 * max.max(f64::MIN_POSITIVE) {
        log::warn!("stationary density dips to {min:e} against a peak of {max:e} before clamping");
    }
    let data = dense.data.iter().map(|&v| v.max(0.0)).collect();
    let clamped = tt_from_dense(&DenseTensor::new(dense.modes.clone(), data)?, 1e-13, usize::MAX)?;
    Ok((clamped, true))
}

fn normalized(domain: &DiscretizedDomain, p: &TtVector) -> Result<TtVector, FpError> {
    let mass = integral(domain, p)?;
    if !mass.is_finite() || mass == 0.0 {
        return Err(FpError::DegenerateDensity);
    }
    Ok(p.scaled(1.0 / mass))
}

/// Computes the stationary density of the generator by shifted inverse power
/// iteration, starting from `init` (or the uniform density).
pub fn stationary_density(
    op: &FpOperator,
    domain: &DiscretizedDomain,
    init: Option<&TtVector>,
    cfg: &StationarySolveConfig,
) -> Result<(TtVector, StationaryReport), FpError> {
    let modes = domain.mode_sizes();
    let volume = domain.quadrature_weight() * domain.total_nodes() as f64;
    let flatten = cfg.flatten_parameter_marginal && domain.n_state_dims() < domain.ndims();
    let mut flattened = false;
    let mut p = match init {
        Some(v) => normalized(domain, v)?,
        None => TtVector::constant(&modes, 1.0 / volume)?,
    };
    if flatten && init.is_some() {
        // Start in the pinned gauge so warm restarts converge in it too.
        p = normalized(domain, &flatten_parameter_marginal(domain, &p, cfg)?)?;
        flattened = true;
    }
    // Natural eigenvalue unit: RMS row scale of the operator.
    let lambda_scale =
        (op.matrix.frobenius_norm() / (domain.total_nodes() as f64).sqrt()).max(f64::MIN_POSITIVE);

    let mut shift = cfg.shift;
    let mut shift_is_fallback = shift == cfg.fallback_shift;
    let mut iterations: Vec<StationaryIteration> = Vec::new();
    let mut converged = false;
    let mut residual_certified = true;
    let mut last_lambda = f64::NAN;
    let mut last_residual = f64::INFINITY;

    // Inner linear solves follow the inexact-inverse-iteration pattern: the
    // first solve only needs modest accuracy, later ones tighten with the
    // density delta. Correctness rests on the certified residual bound of
    // the returned iterate, never on the inner tolerance.
    let mut inner = cfg.amen.clone();
    inner.max_rank = inner.max_rank.max(cfg.max_rank);

    for _ in 0..cfg.max_iters {
        inner.tol = match iterations.last() {
            None => cfg.amen.tol.max(1e-3),
            Some(it) => (0.3 * it.density_delta).clamp(cfg.amen.tol, 1e-3),
        };
        let system = if shift == 0.0 {
            op.matrix.clone()
        } else {
            op.matrix.add(&TtMatrix::identity(&modes)?.scaled(-shift))?
        };
        let solve = crate::tt::amen_solve(&system, &p, Some(&p), &inner);
        let (y, solve_report) = match solve {
            Ok(pair) => pair,
            Err(TtError::SolveStalled { .. }) | Err(TtError::SingularLocalSystem(_))
                if !shift_is_fallback =>
            {
                log::warn!(
                    "inverse-iteration solve at shift {shift:e} reported near-singularity; \
                     retrying with fallback shift {:e}",
                    cfg.fallback_shift
                );
                shift = cfg.fallback_shift;
                shift_is_fallback = true;
                continue;
            }
            Err(TtError::SolveStalled { residual, .. })
                if last_residual <= cfg.residual_bound =>
            {
                // Rank starvation in a refinement attempt does not
                // invalidate the iterate we already certified.
                log::info!(
                    "inner solve stalled at {residual:e}; keeping the iterate with certified \
                     residual bound {last_residual:e}"
                );
                converged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        // From (A - shift I) y = p + rho: A y = p + shift*y + rho, which
        // yields both the Rayleigh quotient and a residual bound without
        // forming A*y.
        let y_norm = y.norm();
        if !(y_norm > 0.0) {
            return Err(FpError::DegenerateDensity);
        }
        let image = p.add(&y.scaled(shift))?;
        let lambda = y.dot(&image)? / (y_norm * y_norm);
        let rho = solve_report.final_residual * p.norm();
        let residual_bound = (image.norm() + rho) / y_norm;
        if solve_report.residual_is_estimate {
            residual_certified = false;
        }

        let mut next = normalized(domain, &tt_round(&y, cfg.round_tol, cfg.max_rank)?)?;
        if flatten {
            // Re-pin the gauge every iteration: the solve amplifies each
            // parameter slice by its own kernel gain, and left alone the
            // softest slice swallows all the mass within a few iterations.
            next = normalized(domain, &flatten_parameter_marginal(domain, &next, cfg)?)?;
            flattened = true;
        }
        let delta = next.add(&p.scaled(-1.0))?.norm() / p.norm();
        iterations.push(StationaryIteration {
            eigenvalue: lambda,
            residual_bound,
            density_delta: delta,
            max_rank: next.max_rank(),
            amen_converged: solve_report.converged,
        });
        log::info!(
            "stationary iteration {}: eigenvalue {lambda:e}, residual bound {residual_bound:e}, \
             density delta {delta:e}, rank {}",
            iterations.len(),
            next.max_rank()
        );
        p = next;
        let lambda_delta = (lambda - last_lambda).abs();
        last_lambda = lambda;
        last_residual = residual_bound;
        if iterations.len() >= 2
            && (lambda_delta <= cfg.tol * lambda_scale || delta <= cfg.tol)
        {
            converged = true;
            break;
        }
    }

    if !converged {
        let delta = iterations.last().map_or(f64::INFINITY, |it| it.density_delta);
        return Err(FpError::StationaryNotConverged {
            iterations: iterations.len(),
            delta,
            residual: last_residual,
        });
    }
    if last_residual > cfg.residual_bound {
        return Err(FpError::ResidualBound {
            residual: last_residual,
            bound: cfg.residual_bound,
        });
    }

    let (clamped_p, clamped) = clamp_density(domain, &p, cfg)?;
    p = clamped_p;
    if flatten {
        // Clamping can nudge the slice masses; restore the gauge once more.
        p = flatten_parameter_marginal(domain, &p, cfg)?;
        flattened = true;
    }
    p = normalized(domain, &p)?;

    let report = StationaryReport {
        eigenvalue: last_lambda,
        residual_bound: last_residual,
        residual_is_certified: residual_certified,
        converged,
        shift_used: shift,
        flattened,
        clamped,
        iterations,
    };
    Ok((p, report))
}

#[cfg(test)]
mod tests {
    use super::super::operator::{assemble_fp_operator, AssemblyOptions};
    use super::super::DriftField;
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::tt::{tt_from_dense, DenseTensor};

    fn field(domain: &DiscretizedDomain, label: &str, f: impl Fn(&[f64]) -> f64) -> DriftField {
        let dense =
            DenseTensor::from_fn(&domain.mode_sizes(), |idx| f(&domain.coords(idx))).unwrap();
        DriftField {
            label: label.to_string(),
            field: tt_from_dense(&dense, 1e-14, usize::MAX).unwrap(),
        }
    }

    fn solve(
        domain: &DiscretizedDomain,
        drifts: Vec<DriftField>,
        sigma: &[f64],
    ) -> (TtVector, StationaryReport) {
        let op = assemble_fp_operator(domain, &drifts, sigma, &AssemblyOptions::default()).unwrap();
        stationary_density(&op, domain, None, &StationarySolveConfig::default()).unwrap()
    }

    #[test]
    fn pure_diffusion_settles_on_the_uniform_density() {
        let domain = build_grid(vec![
            GridSpec::state("x", -1.0, 1.0, 17),
            GridSpec::state("y", 0.0, 2.0, 13),
        ])
        .unwrap();
        let drifts = vec![field(&domain, "x", |_| 0.0), field(&domain, "y", |_| 0.0)];
        let (p, report) = solve(&domain, drifts, &[1e-3, 1e-3]);
        let volume = domain.quadrature_weight() * domain.total_nodes() as f64;
        let uniform = 1.0 / volume;
        for lin in [0usize, 5, 100, 220] {
            let v = p.eval(&domain.linear_to_multi(lin));
            assert!((v - uniform).abs() <= 1e-8 * uniform, "{v} vs {uniform}");
        }
        assert!(report.eigenvalue.abs() <= 1e-10);
        assert!((integral(&domain, &p).unwrap() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn ornstein_uhlenbeck_matches_the_analytic_gaussian() {
        let domain = build_grid(vec![GridSpec::state("x", -1.0, 1.0, 257)]).unwrap();
        let drifts = vec![field(&domain, "x", |c| -c[0])];
        let (p, report) = solve(&domain, drifts, &[0.05]);
        assert!(report.converged);

        let h = domain.step(0);
        let gauss: Vec<f64> = domain.nodes(0).iter().map(|x| (-x * x / 0.1).exp()).collect();
        let z: f64 = gauss.iter().sum::<f64>() * h;
        let mut l1 = 0.0;
        for (k, g) in gauss.iter().enumerate() {
            l1 += (p.eval(&[k]) - g / z).abs() * h;
        }
        assert!(l1 <= 1e-2, "L1 error {l1}");
    }

    #[test]
    fn separable_drift_gives_a_product_density() {
        let nx = 65;
        let ny = 49;
        let dom2 = build_grid(vec![
            GridSpec::state("x", -1.0, 1.0, nx),
            GridSpec::state("y", -1.0, 1.0, ny),
        ])
        .unwrap();
        let drifts = vec![
            field(&dom2, "x", |c| -c[0]),
            field(&dom2, "y", |c| -2.0 * c[1]),
        ];
        let (p2, _) = solve(&dom2, drifts, &[0.05, 0.05]);

        let dx = build_grid(vec![GridSpec::state("x", -1.0, 1.0, nx)]).unwrap();
        let (px, _) = solve(&dx, vec![field(&dx, "x", |c| -c[0])], &[0.05]);
        let dy = build_grid(vec![GridSpec::state("y", -1.0, 1.0, ny)]).unwrap();
        let (py, _) = solve(&dy, vec![field(&dy, "y", |c| -2.0 * c[0])], &[0.05]);

        let mut l1 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let want = px.eval(&[i]) * py.eval(&[j]);
                l1 += (p2.eval(&[i, j]) - want).abs() * dx.step(0) * dy.step(0);
            }
        }
        assert!(l1 <= 2e-2, "product-density L1 gap {l1}");
    }

    #[test]
    fn parameter_marginal_is_pinned_flat() {
        let domain = build_grid(vec![
            GridSpec::state("x", -1.0, 1.0, 33),
            GridSpec::parameter("theta", 0.5, 2.0, 9),
        ])
        .unwrap();
        let drifts = vec![field(&domain, "x", |c| -c[1] * c[0])];
        let (p, report) = solve(&domain, drifts, &[0.02]);
        assert!(report.flattened);
        let mass = parameter_mass(&domain, &p).unwrap();
        let expected = 1.0 / (domain.step(1) * 9.0);
        for k in 0..9 {
            let v = mass.eval(&[k]);
            assert!((v - expected).abs() <= 1e-8 * expected, "slice {k}: {v} vs {expected}");
        }
        // Narrower conditional spread for stiffer restoring drift.
        let spread = |k: usize| {
            let mut m0 = 0.0;
            let mut m2 = 0.0;
            for i in 0..33 {
                let v = p.eval(&[i, k]);
                let x = domain.node(0, i);
                m0 += v;
                m2 += v * x * x;
            }
            m2 / m0
        };
        assert!(spread(8) < spread(0));
    }

    #[test]
    fn unconverged_iteration_reports_an_error() {
        let domain = build_grid(vec![GridSpec::state("x", -1.0, 1.0, 33)]).unwrap();
        let drifts = vec![field(&domain, "x", |c| -c[0])];
        let op =
            assemble_fp_operator(&domain, &drifts, &[0.05], &AssemblyOptions::default()).unwrap();
        let cfg = StationarySolveConfig { max_iters: 1, tol: 1e-16, ..Default::default() };
        let err = stationary_density(&op, &domain, None, &cfg);
        assert!(matches!(err, Err(FpError::StationaryNotConverged { .. })));
    }
}
