//! Coupling measured bus data to grid densities.
//!
//! A window of the measured trace is averaged into a frozen [`OperatingPoint`].
//! Every grid node then predicts the composite power it would draw at that
//! terminal condition; the squared residual against the measurement is the
//! node's misfit. The misfit enters in one of two ways: as a static Gaussian
//! likelihood that reweights the stationary density, or as an absorption
//! ("sink") term subtracted from the generator so that transient evolution
//! drains mass from poorly fitting regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::drift::{FieldOptions, NodeBaselines};
use super::operator::FpOperator;
use super::stationary::integral;
use super::FpError;
use crate::grid::DiscretizedDomain;
use crate::load_model::{
    composite_power, dq_transform, im_currents, im_power, transient_reactance, zip_power,
    BaselineOperatingPoint, BusMeasurement, CompositeLoadParams, MotorState,
};
use crate::tt::{tt_cross, tt_from_dense, tt_round, tt_round_matrix, DenseTensor, TtMatrix, TtVector};

/// Misfit assigned to nodes whose parameters admit no operating point (and
/// ceiling for everything else, so sampled fields stay bounded).
pub const MISFIT_CAP: f64 = 1e6;

/// Terminal conditions frozen for grid evaluation: per-unit voltage magnitude
/// and measured active/reactive power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: f64,
    pub p: f64,
    pub q: f64,
}

/// Averages the trace samples with `t0 <= t <= t1` into one operating point.
pub fn average_window(
    trace: &[BusMeasurement],
    t0: f64,
    t1: f64,
) -> Result<OperatingPoint, FpError> {
    let mut n = 0usize;
    let (mut v, mut p, mut q) = (0.0, 0.0, 0.0);
    for sample in trace.iter().filter(|m| m.t >= t0 && m.t <= t1) {
        v += sample.v;
        p += sample.p;
        q += sample.q;
        n += 1;
    }
    if n == 0 {
        return Err(FpError::EmptyWindow { t0, t1 });
    }
    let n = n as f64;
    Ok(OperatingPoint { v: v / n, p: p / n, q: q / n })
}

/// Composite power drawn at the frozen terminal conditions by a motor in the
/// given state, with the static branch anchored at the node's baseline.
pub fn composite_power_at(
    params: &CompositeLoadParams,
    baseline: &BaselineOperatingPoint,
    state: &MotorState,
    at: &OperatingPoint,
) -> Result<(f64, f64), FpError> {
    let dq = dq_transform(at.v, at.p, at.q, params.r_s, params.x_s)?;
    let currents = im_currents(state, &dq, params.r_s, transient_reactance(params));
    let im = im_power(&dq, &currents);
    let zip = zip_power(params, baseline.p_zip0, baseline.q_zip0, at.v / baseline.v0);
    Ok(composite_power(params.omega, zip, im))
}

/// Squared power residual at one node, capped at [`MISFIT_CAP`].
fn misfit_at(baselines: &NodeBaselines, at: &OperatingPoint, multi: &[usize]) -> f64 {
    let params = baselines.params_at(multi);
    let Some(baseline) = baselines.baseline_at(multi) else {
        return MISFIT_CAP;
    };
    let coords = baselines.domain().coords(multi);
    let state = MotorState { v_d_prime: coords[0], v_q_prime: coords[1], slip: coords[2] };
    match composite_power_at(&params, &baseline, &state, at) {
        Ok((p_hat, q_hat)) => {
            let m = 0.5 * ((p_hat - at.p).powi(2) + (q_hat - at.q).powi(2));
            if m.is_finite() {
                m.min(MISFIT_CAP)
            } else {
                MISFIT_CAP
            }
        }
        Err(_) => MISFIT_CAP,
    }
}

fn sample_field(
    domain: &DiscretizedDomain,
    opts: &FieldOptions,
    seed_offset: u64,
    f: impl Fn(&[usize]) -> f64,
) -> Result<TtVector, FpError> {
    if domain.total_nodes() <= opts.dense_threshold {
        let dense = DenseTensor::from_fn(&domain.mode_sizes(), &f)?;
        Ok(tt_from_dense(&dense, 1e-13, usize::MAX)?)
    } else {
        let mut cross_opts = opts.cross.clone();
        cross_opts.seed = cross_opts.seed.wrapping_add(seed_offset);
        Ok(tt_cross(&domain.mode_sizes(), f, &cross_opts)?)
    }
}

/// Squared power residual of every grid node against the operating point.
pub fn misfit_field(
    domain: &DiscretizedDomain,
    baselines: &NodeBaselines,
    at: &OperatingPoint,
    opts: &FieldOptions,
) -> Result<TtVector, FpError> {
    sample_field(domain, opts, 101, |idx| misfit_at(baselines, at, idx))
}

/// Gaussian likelihood of every node, `exp(-(m - m_ref) / (2 tau^2))`.
///
/// `m_ref` shifts the exponent so the best-fitting region sits near 1
/// instead of underflowing — the shift cancels when the reweighted density
/// is renormalized. Use [`approximate_min_misfit`] to pick it.
pub fn likelihood_field(
    domain: &DiscretizedDomain,
    baselines: &NodeBaselines,
    at: &OperatingPoint,
    tau: f64,
    m_ref: f64,
    opts: &FieldOptions,
) -> Result<TtVector, FpError> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(FpError::NonPositiveTemperature(tau));
    }
    let inv = 1.0 / (2.0 * tau * tau);
    sample_field(domain, opts, 211, |idx| (-(misfit_at(baselines, at, idx) - m_ref) * inv).exp())
}

/// Cheap deterministic estimate of the smallest grid misfit: multistart
/// coordinate descent over grid nodes. Returns the misfit and its node.
pub fn approximate_min_misfit(
    domain: &DiscretizedDomain,
    baselines: &NodeBaselines,
    at: &OperatingPoint,
    starts: usize,
    seed: u64,
) -> (f64, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (f64::INFINITY, vec![0; domain.ndims()]);
    for start in 0..starts.max(1) {
        let mut multi: Vec<usize> = if start == 0 {
            // Always include the grid center so the result is never worse
            // than the trivial guess.
            (0..domain.ndims()).map(|d| domain.spec(d).count / 2).collect()
        } else {
            (0..domain.ndims()).map(|d| rng.gen_range(0..domain.spec(d).count)).collect()
        };
        let mut value = misfit_at(baselines, at, &multi);
        loop {
            let mut improved = false;
            for d in 0..domain.ndims() {
                let mut probe = multi.clone();
                for k in 0..domain.spec(d).count {
                    probe[d] = k;
                    let m = misfit_at(baselines, at, &probe);
                    if m < value {
                        value = m;
                        multi[d] = k;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if value < best.0 {
            best = (value, multi);
        }
    }
    best
}

/// Reweights a density by a likelihood field and renormalizes to unit
/// midpoint integral.
pub fn posterior_reweight(
    density: &TtVector,
    likelihood: &TtVector,
    domain: &DiscretizedDomain,
    round_tol: f64,
    max_rank: usize,
) -> Result<TtVector, FpError> {
    let product = density.hadamard(likelihood)?;
    let mut rounded = tt_round(&product, round_tol, max_rank)?;
    let mass = integral(domain, &rounded)?;
    if !mass.is_finite() || mass <= 0.0 {
        return Err(FpError::DegenerateDensity);
    }
    rounded.scale(1.0 / mass);
    Ok(rounded)
}

/// Folds the misfit into the generator as an absorption term,
/// `A - diag(m) / (2 tau^2)`, for transient likelihood weighting.
pub fn with_sink(
    op: &FpOperator,
    misfit: &TtVector,
    tau: f64,
    round_tol: f64,
    max_rank: usize,
) -> Result<FpOperator, FpError> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(FpError::NonPositiveTemperature(tau));
    }
    let sink = TtMatrix::diagonal(&misfit.scaled(-1.0 / (2.0 * tau * tau)));
    let matrix = tt_round_matrix(&op.matrix.add(&sink)?, round_tol, max_rank)?;
    Ok(FpOperator { matrix, diffusion: op.diffusion.clone(), boundary: op.boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fokker_planck::drift::tests::{reference_params, state_axes};
    use crate::grid::{build_grid, GridSpec};
    use crate::load_model::find_equilibrium;

    fn sample(t: f64, v: f64, p: f64, q: f64) -> BusMeasurement {
        BusMeasurement { t, v, theta: 0.0, p, q }
    }

    #[test]
    fn window_average_uses_only_samples_inside_the_window() {
        let trace = vec![
            sample(0.0, 1.0, 0.6, 0.25),
            sample(1.0, 0.9, 0.5, 0.2),
            sample(2.0, 0.8, 0.4, 0.1),
        ];
        let at = average_window(&trace, 0.5, 2.5).unwrap();
        assert!((at.v - 0.85).abs() < 1e-12);
        assert!((at.p - 0.45).abs() < 1e-12);
        assert!((at.q - 0.15).abs() < 1e-12);
        let err = average_window(&trace, 5.0, 6.0);
        assert!(matches!(err, Err(FpError::EmptyWindow { .. })));
    }

    #[test]
    fn equilibrium_state_reproduces_the_anchor_power() {
        let params = reference_params();
        let (v0, p0, q0) = (1.0, 0.6, 0.25);
        let eq = find_equilibrium(&params, v0, p0, q0).unwrap();
        let at = OperatingPoint { v: v0, p: p0, q: q0 };
        let (p_hat, q_hat) = composite_power_at(&params, &eq, &eq.state, &at).unwrap();
        assert!((p_hat - p0).abs() < 1e-10, "P {p_hat} vs {p0}");
        assert!((q_hat - q0).abs() < 1e-10, "Q {q_hat} vs {q0}");
    }

    #[test]
    fn misfit_vanishes_at_the_equilibrium_node_and_grows_away_from_it() {
        let params = reference_params();
        let (v0, p0, q0) = (1.0, 0.6, 0.25);
        let domain = build_grid(state_axes(&params, v0, p0, q0, 33)).unwrap();
        let baselines = NodeBaselines::new(&domain, &params, v0, p0, q0).unwrap();
        let at = OperatingPoint { v: v0, p: p0, q: q0 };
        let (m_min, node) =
            approximate_min_misfit(&domain, &baselines, &at, 4, 99);
        // The continuous minimum is 0 at the equilibrium; on the grid it is
        // bounded by the squared local variation over one cell.
        assert!(m_min < 1e-3, "min misfit {m_min:e}");
        let mut corner = vec![0; 3];
        corner[2] = domain.spec(2).count - 1;
        let m_corner = misfit_at(&baselines, &at, &corner);
        assert!(m_corner > 10.0 * m_min.max(1e-9), "corner {m_corner:e}");
        assert!(node.iter().all(|&k| k > 0 && k < 33 - 1), "interior minimum {node:?}");
    }

    #[test]
    fn likelihood_peaks_where_the_misfit_bottoms_out() {
        let params = reference_params();
        let (v0, p0, q0) = (1.0, 0.6, 0.25);
        let domain = build_grid(state_axes(&params, v0, p0, q0, 9)).unwrap();
        let baselines = NodeBaselines::new(&domain, &params, v0, p0, q0).unwrap();
        let at = OperatingPoint { v: v0, p: p0, q: q0 };
        let opts = FieldOptions::default();
        let (m_ref, node) = approximate_min_misfit(&domain, &baselines, &at, 4, 7);
        let tau = m_ref.sqrt() + 0.05;
        let like = likelihood_field(&domain, &baselines, &at, tau, m_ref, &opts).unwrap();
        let peak = like.eval(&node);
        assert!((peak - 1.0).abs() < 1e-9, "shifted exponent at the argmin is 1, got {peak}");
        let misfit = misfit_field(&domain, &baselines, &at, &opts).unwrap();
        for lin in 0..domain.total_nodes() {
            let idx = domain.linear_to_multi(lin);
            let expect = (-(misfit.eval(&idx) - m_ref) / (2.0 * tau * tau)).exp();
            assert!((like.eval(&idx) - expect).abs() <= 1e-9 * expect.max(1e-3));
            assert!(like.eval(&idx) <= peak + 1e-9);
        }
        assert!(matches!(
            likelihood_field(&domain, &baselines, &at, 0.0, m_ref, &opts),
            Err(FpError::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn infeasible_nodes_get_the_capped_misfit() {
        let params = reference_params();
        let (v0, p0, q0) = (1.0, 0.6, 0.25);
        let mut axes = state_axes(&params, v0, p0, q0, 5);
        axes.push(GridSpec::parameter("x_s", 0.05, 4.0, 9));
        let domain = build_grid(axes).unwrap();
        let baselines = NodeBaselines::new(&domain, &params, v0, p0, q0).unwrap();
        let at = OperatingPoint { v: 0.95, p: 0.58, q: 0.24 };
        let m = misfit_at(&baselines, &at, &[2, 2, 2, 8]);
        assert_eq!(m, MISFIT_CAP);
        assert!(baselines.degenerate_count() > 0);
    }

    #[test]
    fn reweighting_renormalizes_and_concentrates_mass() {
        let params = reference_params();
        let (v0, p0, q0) = (1.0, 0.6, 0.25);
        let domain = build_grid(state_axes(&params, v0, p0, q0, 9)).unwrap();
        let baselines = NodeBaselines::new(&domain, &params, v0, p0, q0).unwrap();
        let at = OperatingPoint { v: v0, p: p0, q: q0 };
        let opts = FieldOptions::default();
        let (m_ref, node) = approximate_min_misfit(&domain, &baselines, &at, 4, 7);
        let like = likelihood_field(&domain, &baselines, &at, m_ref.sqrt() + 0.02, m_ref, &opts)
            .unwrap();
        // Uniform prior over the box.
        let volume: f64 =
            (0..3).map(|d| domain.step(d) * domain.spec(d).count as f64).product();
        let mut factors: Vec<Vec<f64>> =
            (0..3).map(|d| vec![1.0; domain.spec(d).count]).collect();
        for v in &mut factors[0] {
            *v = 1.0 / volume;
        }
        let uniform = TtVector::rank_one(&factors).unwrap();
        let posterior = posterior_reweight(&uniform, &like, &domain, 1e-12, 200).unwrap();
        assert!((integral(&domain, &posterior).unwrap() - 1.0).abs() < 1e-9);
        assert!(posterior.eval(&node) > uniform.eval(&node), "mass concentrates at the fit");
    }

    #[test]
    fn sink_subtracts_the_scaled_misfit_from_the_diagonal() {
        use crate::fokker_planck::{assemble_fp_operator, AssemblyOptions, DriftField};
        let domain = build_grid(vec![
            GridSpec::state("v_d_prime", -1.0, 1.0, 5),
            GridSpec::state("v_q_prime", -1.0, 1.0, 5),
            GridSpec::state("slip", 0.0, 0.1, 5),
        ])
        .unwrap();
        let zeros = TtVector::rank_one(&vec![vec![0.0; 5]; 3]).unwrap();
        let drifts: Vec<DriftField> = ["v_d_prime", "v_q_prime", "slip"]
            .iter()
            .map(|l| DriftField { label: l.to_string(), field: zeros.clone() })
            .collect();
        let op = assemble_fp_operator(&domain, &drifts, &[1e-3; 3], &AssemblyOptions::default())
            .unwrap();
        let mut m_vals = vec![vec![0.0; 5]; 3];
        m_vals[0] = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        m_vals[1] = vec![1.0; 5];
        m_vals[2] = vec![1.0; 5];
        let misfit = TtVector::rank_one(&m_vals).unwrap();
        let tau = 0.5;
        let sunk = with_sink(&op, &misfit, tau, 1e-13, 200).unwrap();
        let diff = sunk.matrix.add(&op.matrix.scaled(-1.0)).unwrap();
        let (dense, rows, _) = crate::tt::tt_matrix_to_dense(&diff).unwrap();
        for r in 0..rows {
            for c in 0..rows {
                let want = if r == c {
                    -misfit.eval(&domain.linear_to_multi(r)) / (2.0 * tau * tau)
                } else {
                    0.0
                };
                assert!(
                    (dense[r * rows + c] - want).abs() < 1e-10,
                    "entry ({r},{c}): {} vs {want}",
                    dense[r * rows + c]
                );
            }
        }
        assert!(matches!(
            with_sink(&op, &misfit, -1.0, 1e-13, 200),
            Err(FpError::NonPositiveTemperature(_))
        ));
    }
}
