//! Motor drift fields over the joint state/parameter grid.
//!
//! Each grid node pairs a motor state with a full parameter set (grid axes
//! override the frozen base values). The drift is the motor state derivative
//! at that node, evaluated with the terminal voltage frozen at a measured
//! operating point and the mechanical torque anchored by the pre-disturbance
//! equilibrium of that node's parameters. Equilibria depend only on a subset
//! of the parameters, so they are cached per distinct sub-tuple.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::measurement::OperatingPoint;
use super::{DriftField, FpError};
use crate::grid::DiscretizedDomain;
use crate::load_model::{
    dq_transform, find_equilibrium, im_currents, im_derivatives, transient_reactance,
    BaselineOperatingPoint, CompositeLoadParams, MotorState, ESTIMABLE_PARAMS, STATE_LABELS,
};
use crate::tt::{tt_cross, tt_from_dense, CrossOptions, DenseTensor};

/// Parameters that change the pre-disturbance equilibrium (and therefore the
/// cached torque anchor). ZIP polynomial coefficients and the inertia do not:
/// the ZIP branch reproduces its baseline at the anchoring voltage for any
/// coefficients, and the inertia only scales dynamics.
const EQUILIBRIUM_RELEVANT: [&str; 6] = ["omega", "r_s", "x_s", "r_r", "x_r", "x_m"];

/// How grid fields sampled from pointwise evaluators are built.
#[derive(Debug, Clone)]
pub struct FieldOptions {
    pub cross: CrossOptions,
    /// At or below this many grid nodes the field is tabulated densely.
    pub dense_threshold: usize,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            cross: CrossOptions { tol: 1e-12, max_rank: 80, ..CrossOptions::default() },
            dense_threshold: 120_000,
        }
    }
}

/// Per-parameter-node equilibrium anchors, computed lazily and cached.
///
/// Nodes whose parameters cannot carry the anchoring power (no equilibrium
/// slip exists) are recorded as degenerate: their drift freezes to zero and
/// their data misfit saturates, so downstream weighting removes them.
pub struct NodeBaselines {
    domain: DiscretizedDomain,
    base: CompositeLoadParams,
    v0: f64,
    p0: f64,
    q0: f64,
    relevant_dims: Vec<usize>,
    cache: Mutex<HashMap<Vec<usize>, Option<BaselineOperatingPoint>>>,
    degenerate: AtomicUsize,
}

impl NodeBaselines {
    /// Validates the grid against the motor model and anchors it to the
    /// pre-disturbance operating point `(v0, p0, q0)`.
    pub fn new(
        domain: &DiscretizedDomain,
        base: &CompositeLoadParams,
        v0: f64,
        p0: f64,
        q0: f64,
    ) -> Result<Self, FpError> {
        let got: Vec<String> =
            domain.specs()[..domain.n_state_dims()].iter().map(|s| s.label.clone()).collect();
        if got != STATE_LABELS {
            return Err(FpError::StateAxes {
                expected: STATE_LABELS.iter().map(|s| s.to_string()).collect(),
                got,
            });
        }
        let mut relevant_dims = Vec::new();
        for d in domain.n_state_dims()..domain.ndims() {
            let label = &domain.spec(d).label;
            if !ESTIMABLE_PARAMS.contains(&label.as_str()) {
                return Err(FpError::UnknownParameterAxis(label.clone()));
            }
            if EQUILIBRIUM_RELEVANT.contains(&label.as_str()) {
                relevant_dims.push(d);
            }
        }
        let this = NodeBaselines {
            domain: domain.clone(),
            base: *base,
            v0,
            p0,
            q0,
            relevant_dims,
            cache: Mutex::new(HashMap::new()),
            degenerate: AtomicUsize::new(0),
        };
        // Corner validation: every admissible-parameter constraint is an
        // interval, so checking the two extreme corners covers the box.
        for corner in [false, true] {
            let multi: Vec<usize> = (0..domain.ndims())
                .map(|d| if corner { domain.spec(d).count - 1 } else { 0 })
                .collect();
            this.params_at(&multi).validate()?;
        }
        Ok(this)
    }

    /// Fraction of a regular sub-lattice of parameter combinations that have
    /// an operating point. Cheap sanity probe: a value of 0 means the whole
    /// box is starved and every drift will be frozen.
    pub fn probe_feasibility(&self, per_axis: usize) -> f64 {
        let state_dims = self.domain.n_state_dims();
        let param_dims = self.domain.ndims() - state_dims;
        let mut multi: Vec<usize> = (0..self.domain.ndims())
            .map(|d| self.domain.spec(d).count / 2)
            .collect();
        if param_dims == 0 {
            return if self.baseline_at(&multi).is_some() { 1.0 } else { 0.0 };
        }
        let mut feasible = 0usize;
        let mut total = 0usize;
        let per_axis = per_axis.max(1);
        let mut counter = vec![0usize; param_dims];
        loop {
            for (axis, &c) in counter.iter().enumerate() {
                let d = state_dims + axis;
                let n = self.domain.spec(d).count;
                multi[d] = if per_axis == 1 { n / 2 } else { (c * (n - 1)) / (per_axis - 1) };
            }
            total += 1;
            if self.baseline_at(&multi).is_some() {
                feasible += 1;
            }
            let mut axis = 0;
            loop {
                counter[axis] += 1;
                if counter[axis] < per_axis {
                    break;
                }
                counter[axis] = 0;
                axis += 1;
                if axis == param_dims {
                    return feasible as f64 / total as f64;
                }
            }
        }
    }

    /// The frozen base with this node's parameter-axis values substituted.
    pub fn params_at(&self, multi: &[usize]) -> CompositeLoadParams {
        let mut params = self.base;
        for d in self.domain.n_state_dims()..self.domain.ndims() {
            let ok = params.set(&self.domain.spec(d).label, self.domain.node(d, multi[d]));
            debug_assert!(ok, "parameter axes validated in the constructor");
        }
        params
    }

    /// The cached equilibrium anchor for this node's parameters, or `None`
    /// when the operating point is infeasible there.
    pub fn baseline_at(&self, multi: &[usize]) -> Option<BaselineOperatingPoint> {
        let key: Vec<usize> = self.relevant_dims.iter().map(|&d| multi[d]).collect();
        let mut cache = self.cache.lock().expect("baseline cache poisoned");
        if let Some(hit) = cache.get(&key) {
            return *hit;
        }
        let result = find_equilibrium(&self.params_at(multi), self.v0, self.p0, self.q0).ok();
        if result.is_none() {
            self.degenerate.fetch_add(1, Ordering::Relaxed);
        }
        cache.insert(key, result);
        result
    }

    /// Number of distinct parameter sub-tuples without an equilibrium.
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.load(Ordering::Relaxed)
    }

    pub fn anchor(&self) -> (f64, f64, f64) {
        (self.v0, self.p0, self.q0)
    }

    pub fn base_params(&self) -> &CompositeLoadParams {
        &self.base
    }

    pub fn domain(&self) -> &DiscretizedDomain {
        &self.domain
    }
}

/// One motor drift component at one grid node; 0 on degenerate nodes.
fn drift_at(
    baselines: &NodeBaselines,
    at: &OperatingPoint,
    dim: usize,
    multi: &[usize],
) -> f64 {
    let params = baselines.params_at(multi);
    let Some(baseline) = baselines.baseline_at(multi) else {
        return 0.0;
    };
    let Ok(dq) = dq_transform(at.v, at.p, at.q, params.r_s, params.x_s) else {
        return 0.0;
    };
    let coords = baselines.domain.coords(multi);
    let state =
        MotorState { v_d_prime: coords[0], v_q_prime: coords[1], slip: coords[2] };
    let currents = im_currents(&state, &dq, params.r_s, transient_reactance(&params));
    im_derivatives(&params, &state, &currents, baseline.t_m0)[dim]
}

/// Samples one drift component over the whole grid with the terminal
/// conditions frozen at `at`.
pub fn build_drift_field(
    domain: &DiscretizedDomain,
    baselines: &NodeBaselines,
    at: &OperatingPoint,
    dim: usize,
    opts: &FieldOptions,
) -> Result<DriftField, FpError> {
    debug_assert!(dim < domain.n_state_dims());
    let modes = domain.mode_sizes();
    let field = if domain.total_nodes() <= opts.dense_threshold {
        let dense = DenseTensor::from_fn(&modes, |idx| drift_at(baselines, at, dim, idx))?;
        tt_from_dense(&dense, 1e-13, usize::MAX)?
    } else {
        let mut cross_opts = opts.cross.clone();
        cross_opts.seed = cross_opts.seed.wrapping_add(dim as u64);
        tt_cross(&modes, |idx| drift_at(baselines, at, dim, idx), &cross_opts)?
    };
    let degenerate = baselines.degenerate_count();
    if degenerate > 0 {
        log::warn!(
            "drift component {}: {degenerate} parameter combinations have no operating point; \
             their slices are frozen",
            STATE_LABELS[dim]
        );
    }
    Ok(DriftField { label: STATE_LABELS[dim].to_string(), field })
}

/// All three motor drift components.
pub fn build_all_drift_fields(
    domain: &DiscretizedDomain,
    baselines: &NodeBaselines,
    at: &OperatingPoint,
    opts: &FieldOptions,
) -> Result<Vec<DriftField>, FpError> {
    (0..domain.n_state_dims())
        .map(|dim| build_drift_field(domain, baselines, at, dim, opts))
        .collect()
}
