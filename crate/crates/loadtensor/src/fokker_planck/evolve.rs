//! Transient density evolution by implicit Euler steps.
//!
//! Each step solves `(I - dt*A) p_next = p`. Because the generator's columns
//! sum to zero, the exact step preserves total mass; the solver residual is
//! the only drift source, and the per-step renormalization keeps the density
//! a probability distribution regardless. With a misfit sink folded into the
//! generator the pre-normalization mass decays by design — the recorded mass
//! ratios then measure the retained path likelihood instead.

use super::stationary::{integral, quadrature_weights};
use super::{FpError, FpOperator};
use crate::grid::DiscretizedDomain;
use crate::tt::{amen_solve, tt_round, AmenOptions, TtMatrix, TtVector};

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    /// Rank cap for the density between steps.
    pub max_rank: usize,
    /// Rounding tolerance for the density between steps.
    pub round_tol: f64,
    /// Warn when the pre-normalization mass of one step drifts further than
    /// this from its previous value (meaningful for sink-free generators).
    pub mass_warn_tol: f64,
    pub amen: AmenOptions,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            max_rank: 100,
            round_tol: 1e-10,
            mass_warn_tol: 1e-8,
            amen: AmenOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolveReport {
    /// Pre-normalization mass after each step, relative to the step's input
    /// (1 means exact conservation).
    pub mass_ratios: Vec<f64>,
    pub max_mass_drift: f64,
    pub all_solves_converged: bool,
    pub final_rank: usize,
}

/// Advances `p0` over `steps` implicit-Euler steps of length `dt` and
/// renormalizes after every step.
pub fn evolve_density(
    op: &FpOperator,
    domain: &DiscretizedDomain,
    p0: &TtVector,
    dt: f64,
    steps: usize,
    opts: &EvolveOptions,
) -> Result<(TtVector, EvolveReport), FpError> {
    if !(dt > 0.0) {
        return Err(FpError::NonPositiveStep(dt));
    }
    let modes = domain.mode_sizes();
    let stepper = TtMatrix::identity(&modes)?.add(&op.matrix.scaled(-dt))?;
    let weights = quadrature_weights(domain);

    let start_mass = p0.weighted_sum(&weights)?;
    if !start_mass.is_finite() || start_mass == 0.0 {
        return Err(FpError::DegenerateDensity);
    }
    let mut p = p0.scaled(1.0 / start_mass);
    let mut mass_ratios = Vec::with_capacity(steps);
    let mut max_drift = 0.0f64;
    let mut all_converged = true;

    for step in 0..steps {
        let (y, report) = amen_solve(&stepper, &p, Some(&p), &opts.amen)?;
        if !report.converged {
            all_converged = false;
            log::warn!(
                "implicit step {step}: solver stopped at residual {:e} after {} sweeps",
                report.final_residual,
                report.sweeps
            );
        }
        let rounded = tt_round(&y, opts.round_tol, opts.max_rank)?;
        let mass = integral(domain, &rounded)?;
        if !mass.is_finite() || mass == 0.0 {
            return Err(FpError::DegenerateDensity);
        }
        let drift = (mass - 1.0).abs();
        if drift > opts.mass_warn_tol {
            log::debug!("implicit step {step}: pre-normalization mass {mass} (drift {drift:e})");
        }
        max_drift = max_drift.max(drift);
        mass_ratios.push(mass);
        p = rounded.scaled(1.0 / mass);
    }

    let report = EvolveReport {
        max_mass_drift: max_drift,
        all_solves_converged: all_converged,
        final_rank: p.max_rank(),
        mass_ratios,
    };
    Ok((p, report))
}

#[cfg(test)]
mod tests {
    use super::super::operator::{assemble_fp_operator, AssemblyOptions};
    use super::super::stationary::{stationary_density, StationarySolveConfig};
    use super::super::DriftField;
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::tt::{tt_from_dense, DenseTensor};

    fn field(
        domain: &DiscretizedDomain,
        label: &str,
        f: impl Fn(&[f64]) -> f64,
    ) -> DriftField {
        let dense =
            DenseTensor::from_fn(&domain.mode_sizes(), |idx| f(&domain.coords(idx))).unwrap();
        DriftField {
            label: label.to_string(),
            field: tt_from_dense(&dense, 1e-14, usize::MAX).unwrap(),
        }
    }

    #[test]
    fn diffusion_spreads_a_peak_at_the_analytic_rate() {
        let n = 129;
        let domain = build_grid(vec![GridSpec::state("x", -1.0, 1.0, n)]).unwrap();
        let drifts = vec![field(&domain, "x", |_| 0.0)];
        let sigma = 0.01;
        let op =
            assemble_fp_operator(&domain, &drifts, &[sigma], &AssemblyOptions::default()).unwrap();

        // Unit point mass on the center cell.
        let h = domain.step(0);
        let center = n / 2;
        let mut peak = vec![0.0; n];
        peak[center] = 1.0 / h;
        let p0 = tt_from_dense(&DenseTensor::new(vec![n], peak).unwrap(), 1e-14, 4).unwrap();

        let t = 0.5;
        let steps = 200;
        let (p, report) =
            evolve_density(&op, &domain, &p0, t / steps as f64, steps, &EvolveOptions::default())
                .unwrap();
        assert!(report.max_mass_drift <= 1e-8, "mass drift {:e}", report.max_mass_drift);

        let mut mean = 0.0;
        let mut var = 0.0;
        for k in 0..n {
            let x = domain.node(0, k);
            mean += x * p.eval(&[k]) * h;
        }
        for k in 0..n {
            let x = domain.node(0, k);
            var += (x - mean) * (x - mean) * p.eval(&[k]) * h;
        }
        let want = 2.0 * sigma * t;
        assert!(
            (var - want).abs() <= 0.05 * want,
            "variance {var} vs analytic {want}"
        );
    }

    #[test]
    fn stationary_density_is_a_fixed_point() {
        let domain = build_grid(vec![GridSpec::state("x", -1.0, 1.0, 65)]).unwrap();
        let drifts = vec![field(&domain, "x", |c| -c[0])];
        let op =
            assemble_fp_operator(&domain, &drifts, &[0.05], &AssemblyOptions::default()).unwrap();
        let (stat, _) =
            stationary_density(&op, &domain, None, &StationarySolveConfig::default()).unwrap();
        let (evolved, report) =
            evolve_density(&op, &domain, &stat, 0.05, 20, &EvolveOptions::default()).unwrap();
        let h = domain.step(0);
        let mut l1 = 0.0;
        for k in 0..65 {
            l1 += (evolved.eval(&[k]) - stat.eval(&[k])).abs() * h;
        }
        assert!(l1 <= 1e-6, "fixed-point drift {l1:e}");
        assert!(report.max_mass_drift <= 1e-8);
    }

    #[test]
    fn mass_stays_normalized_every_step() {
        let domain = build_grid(vec![
            GridSpec::state("x", -1.0, 1.0, 33),
            GridSpec::state("y", -1.0, 1.0, 33),
        ])
        .unwrap();
        let drifts = vec![
            field(&domain, "x", |c| -c[0] + 0.2 * c[1]),
            field(&domain, "y", |c| -c[1]),
        ];
        let op = assemble_fp_operator(&domain, &drifts, &[0.02, 0.02], &AssemblyOptions::default())
            .unwrap();
        let volume = domain.quadrature_weight() * domain.total_nodes() as f64;
        let p0 = TtVector::constant(&domain.mode_sizes(), 1.0 / volume).unwrap();
        let (p, report) =
            evolve_density(&op, &domain, &p0, 0.02, 25, &EvolveOptions::default()).unwrap();
        for (k, m) in report.mass_ratios.iter().enumerate() {
            assert!((m - 1.0).abs() <= 1e-8, "step {k}: mass {m}");
        }
        assert!((integral(&domain, &p).unwrap() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn rejects_non_positive_steps() {
        let domain = build_grid(vec![GridSpec::state("x", -1.0, 1.0, 9)]).unwrap();
        let drifts = vec![field(&domain, "x", |_| 0.0)];
        let op =
            assemble_fp_operator(&domain, &drifts, &[1e-3], &AssemblyOptions::default()).unwrap();
        let p0 = TtVector::constant(&[9], 1.0).unwrap();
        let err = evolve_density(&op, &domain, &p0, 0.0, 5, &EvolveOptions::default());
        assert!(matches!(err, Err(FpError::NonPositiveStep(_))));
    }
}
