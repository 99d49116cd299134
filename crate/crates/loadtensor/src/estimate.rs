//! Density post-processing: univariate and pairwise marginals, mode and
//! local-optima extraction, sensitivity indices, fit evaluation, and a dense
//! enumeration reference for low-dimensional parameter sweeps.
//!
//! Everything here treats the joint density as a function on the midpoint
//! grid of [`crate::grid`], so integrals are midpoint sums with the constant
//! cell weight. Marginals coming out of the tensor-train solver can carry
//! small negative round-off; they are clamped and renormalized on extraction
//! so downstream code always sees a proper probability density.

use crate::fokker_planck::StationaryReport;
use crate::grid::{AxisKind, DiscretizedDomain};
use crate::load_model::{
    simulate_response, BusMeasurement, CompositeLoadParams, ModelError, ResponseTrace, SimOptions,
    ESTIMABLE_PARAMS,
};
use crate::tt::{matmul, Core3, TtError, TtVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Most free dimensions [`brute_force_posterior`] will enumerate.
pub const MAX_SWEEP_DIMS: usize = 3;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("dimension {dim} out of range for a {ndims}-dimensional grid")]
    DimOutOfRange { dim: usize, ndims: usize },
    #[error("pair marginal needs two distinct dimensions, got {0} twice")]
    DuplicateDims(usize),
    #[error("density mass vanished; modes and marginals are undefined")]
    DegenerateDensity,
    #[error("no marginals supplied")]
    NoMarginals,
    #[error(
        "brute-force sweep over {got} grid dimensions; at most {max} are tractable — freeze \
         the extra parameters or fall back to the density-based concentration index"
    )]
    SweepTooLarge { got: usize, max: usize },
    #[error("grid axis `{0}` is not an estimable model parameter")]
    UnknownParameterAxis(String),
    #[error("likelihood temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("density has modes {got:?} but the grid has {expected:?}")]
    ModesMismatch { got: Vec<usize>, expected: Vec<usize> },
    #[error(transparent)]
    Tt(#[from] TtError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("result serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Univariate probability density on the midpoint nodes of one grid axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPdf {
    pub label: String,
    pub coordinates: Vec<f64>,
    pub values: Vec<f64>,
}

impl MarginalPdf {
    /// Node spacing (axes are uniform, with at least two nodes).
    pub fn step(&self) -> f64 {
        self.coordinates[1] - self.coordinates[0]
    }

    /// Midpoint-rule integral; 1 up to round-off for extracted marginals.
    pub fn integral(&self) -> f64 {
        self.step() * self.values.iter().sum::<f64>()
    }

    /// Index of the largest value; ties break toward the lower coordinate.
    /// A marginal with no positive value has no mode.
    pub fn argmax(&self) -> Result<usize, EstimateError> {
        argmax_strict(&self.values).ok_or(EstimateError::DegenerateDensity)
    }

    /// Coordinate of the mode.
    pub fn mode(&self) -> Result<f64, EstimateError> {
        Ok(self.coordinates[self.argmax()?])
    }
}

/// First index of the maximum entry, or `None` when nothing is positive.
/// Scanning with a strict `>` both breaks ties toward the lower index and
/// makes the winner invariant under positive rescaling.
fn argmax_strict(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v > best.map_or(0.0, |(_, b)| b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn check_modes(density: &TtVector, domain: &DiscretizedDomain) -> Result<(), EstimateError> {
    let got = density.modes();
    let expected = domain.mode_sizes();
    if got != expected {
        return Err(EstimateError::ModesMismatch { got, expected });
    }
    Ok(())
}

/// Mode-summed core slice `h * sum_i G[i]`, an `(r_left x r_right)` matrix.
/// Contracting a core with its axis' midpoint weight integrates that axis
/// out of the train.
fn mode_sum(core: &Core3, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; core.r_left * core.r_right];
    for a in 0..core.r_left {
        let dst = a * core.r_right;
        for i in 0..core.n {
            let src = (a * core.n + i) * core.r_right;
            for b in 0..core.r_right {
                out[dst + b] += h * core.data[src + b];
            }
        }
    }
    out
}

fn finish_marginal(
    domain: &DiscretizedDomain,
    dim: usize,
    mut values: Vec<f64>,
) -> Result<MarginalPdf, EstimateError> {
    for v in &mut values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mass: f64 = values.iter().sum::<f64>() * domain.step(dim);
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(EstimateError::DegenerateDensity);
    }
    for v in &mut values {
        *v /= mass;
    }
    Ok(MarginalPdf {
        label: domain.spec(dim).label.clone(),
        coordinates: domain.nodes(dim),
        values,
    })
}

/// Univariate marginal of the joint density along `dim`: every other axis is
/// contracted with its midpoint weight, then the result is clamped
/// nonnegative and renormalized to unit integral.
///
/// Cost is one pass over the cores — the train is never expanded.
pub fn marginal(
    density: &TtVector,
    domain: &DiscretizedDomain,
    dim: usize,
) -> Result<MarginalPdf, EstimateError> {
    check_modes(density, domain)?;
    let ndims = domain.ndims();
    if dim >= ndims {
        return Err(EstimateError::DimOutOfRange { dim, ndims });
    }
    let cores = density.cores();
    // Row vector absorbing all cores left of `dim`.
    let mut left = vec![1.0];
    for (k, core) in cores.iter().enumerate().take(dim) {
        left = matmul(&left, 1, core.r_left, &mode_sum(core, domain.step(k)), core.r_right);
    }
    // Column vector absorbing all cores right of `dim`.
    let mut right = vec![1.0];
    for (k, core) in cores.iter().enumerate().skip(dim + 1).rev() {
        right = matmul(&mode_sum(core, domain.step(k)), core.r_left, core.r_right, &right, 1);
    }
    let core = &cores[dim];
    let mut values = Vec::with_capacity(core.n);
    for i in 0..core.n {
        let li = matmul(&left, 1, core.r_left, &core.slice(i), core.r_right);
        values.push(matmul(&li, 1, core.r_right, &right, 1)[0]);
    }
    finish_marginal(domain, dim, values)
}

/// Pairwise marginal density over two grid axes, normalized to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPdf {
    pub label_a: String,
    pub label_b: String,
    pub coords_a: Vec<f64>,
    pub coords_b: Vec<f64>,
    /// Row-major table: `values[i * coords_b.len() + j]` sits at `(a_i, b_j)`.
    pub values: Vec<f64>,
}

impl JointPdf {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.coords_b.len() + j]
    }

    pub fn step_a(&self) -> f64 {
        self.coords_a[1] - self.coords_a[0]
    }

    pub fn step_b(&self) -> f64 {
        self.coords_b[1] - self.coords_b[0]
    }

    /// Midpoint-rule mass; 1 up to round-off.
    pub fn integral(&self) -> f64 {
        self.step_a() * self.step_b() * self.values.iter().sum::<f64>()
    }

    /// First axis marginal by contracting the second with its midpoint
    /// weight. No renormalization: the result inherits this table's mass,
    /// which makes it a genuine consistency probe against [`marginal`].
    pub fn marginal_a(&self) -> MarginalPdf {
        let nb = self.coords_b.len();
        let h = self.step_b();
        let values = self
            .values
            .chunks(nb)
            .map(|row| h * row.iter().sum::<f64>())
            .collect();
        MarginalPdf { label: self.label_a.clone(), coordinates: self.coords_a.clone(), values }
    }

    /// Second axis marginal; see [`marginal_a`](Self::marginal_a).
    pub fn marginal_b(&self) -> MarginalPdf {
        let nb = self.coords_b.len();
        let h = self.step_a();
        let mut values = vec![0.0; nb];
        for row in self.values.chunks(nb) {
            for (v, &x) in values.iter_mut().zip(row) {
                *v += h * x;
            }
        }
        MarginalPdf { label: self.label_b.clone(), coordinates: self.coords_b.clone(), values }
    }

    /// Indices of the largest entry; ties toward the lower coordinates.
    pub fn argmax(&self) -> Result<(usize, usize), EstimateError> {
        let nb = self.coords_b.len();
        argmax_strict(&self.values)
            .map(|lin| (lin / nb, lin % nb))
            .ok_or(EstimateError::DegenerateDensity)
    }
}

/// Pairwise marginal of the joint density over `dim_a` and `dim_b` (kept in
/// that order in the output). All other axes are contracted with midpoint
/// weights; the table is clamped nonnegative and renormalized.
pub fn joint_marginal_2d(
    density: &TtVector,
    domain: &DiscretizedDomain,
    dim_a: usize,
    dim_b: usize,
) -> Result<JointPdf, EstimateError> {
    check_modes(density, domain)?;
    let ndims = domain.ndims();
    for dim in [dim_a, dim_b] {
        if dim >= ndims {
            return Err(EstimateError::DimOutOfRange { dim, ndims });
        }
    }
    if dim_a == dim_b {
        return Err(EstimateError::DuplicateDims(dim_a));
    }
    let (lo, hi) = (dim_a.min(dim_b), dim_a.max(dim_b));
    let cores = density.cores();

    let mut left = vec![1.0];
    for (k, core) in cores.iter().enumerate().take(lo) {
        left = matmul(&left, 1, core.r_left, &mode_sum(core, domain.step(k)), core.r_right);
    }
    // Product of the summed cores strictly between the two kept axes.
    let r_mid = cores[lo].r_right;
    let mut middle = vec![0.0; r_mid * r_mid];
    for a in 0..r_mid {
        middle[a * r_mid + a] = 1.0;
    }
    let mut mcols = r_mid;
    for (k, core) in cores.iter().enumerate().take(hi).skip(lo + 1) {
        middle = matmul(&middle, r_mid, mcols, &mode_sum(core, domain.step(k)), core.r_right);
        mcols = core.r_right;
    }
    let mut right = vec![1.0];
    for (k, core) in cores.iter().enumerate().skip(hi + 1).rev() {
        right = matmul(&mode_sum(core, domain.step(k)), core.r_left, core.r_right, &right, 1);
    }

    let (clo, chi) = (&cores[lo], &cores[hi]);
    // rows[i] = left · G_lo[i] · middle; cols[j] = G_hi[j] · right.
    let rows: Vec<Vec<f64>> = (0..clo.n)
        .map(|i| {
            let v = matmul(&left, 1, clo.r_left, &clo.slice(i), clo.r_right);
            matmul(&v, 1, clo.r_right, &middle, mcols)
        })
        .collect();
    let cols: Vec<Vec<f64>> =
        (0..chi.n).map(|j| matmul(&chi.slice(j), chi.r_left, chi.r_right, &right, 1)).collect();

    let mut values = vec![0.0; clo.n * chi.n];
    for (i, row) in rows.iter().enumerate() {
        for (j, col) in cols.iter().enumerate() {
            values[i * chi.n + j] = row.iter().zip(col).map(|(x, y)| x * y).sum();
        }
    }
    let (mut na, mut nb) = (clo.n, chi.n);
    if dim_a > dim_b {
        // Computed in grid order (lo = dim_b); transpose into caller order.
        let mut t = vec![0.0; values.len()];
        for i in 0..na {
            for j in 0..nb {
                t[j * na + i] = values[i * nb + j];
            }
        }
        values = t;
        std::mem::swap(&mut na, &mut nb);
    }

    for v in &mut values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mass: f64 = values.iter().sum::<f64>() * domain.step(dim_a) * domain.step(dim_b);
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(EstimateError::DegenerateDensity);
    }
    for v in &mut values {
        *v /= mass;
    }
    Ok(JointPdf {
        label_a: domain.spec(dim_a).label.clone(),
        label_b: domain.spec(dim_b).label.clone(),
        coords_a: domain.nodes(dim_a),
        coords_b: domain.nodes(dim_b),
        values,
    })
}

/// Per-marginal mode assignments `(label, coordinate)`.
///
/// Ties break toward the lower coordinate, an all-zero marginal is an
/// error, and the assignments are invariant under positive rescaling of the
/// density.
pub fn argmax_params(marginals: &[MarginalPdf]) -> Result<Vec<(String, f64)>, EstimateError> {
    if marginals.is_empty() {
        return Err(EstimateError::NoMarginals);
    }
    marginals.iter().map(|m| Ok((m.label.clone(), m.mode()?))).collect()
}

/// Sub-cell mode estimate: the vertex of the parabola through the mode node
/// and its two neighbors. Falls back to the node coordinate when the mode
/// sits on the boundary or the three points carry no downward curvature;
/// the offset is clamped to half a cell so the result stays inside the
/// winning cell.
pub fn parabolic_mode(marginal: &MarginalPdf) -> Result<f64, EstimateError> {
    let i = marginal.argmax()?;
    let v = &marginal.values;
    if i == 0 || i + 1 == v.len() {
        return Ok(marginal.coordinates[i]);
    }
    let denom = v[i - 1] - 2.0 * v[i] + v[i + 1];
    if !(denom < 0.0) {
        return Ok(marginal.coordinates[i]);
    }
    let offset = 0.5 * (v[i - 1] - v[i + 1]) / denom;
    Ok(marginal.coordinates[i] + offset.clamp(-0.5, 0.5) * marginal.step())
}

/// One secondary optimum of a marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub coordinate: f64,
    pub density: f64,
}

/// Interior nodes strictly above both neighbors whose prominence reaches
/// `min_prominence`, sorted by density descending (coordinate ascending on
/// equal density).
///
/// Prominence is the drop from a peak to the higher of the two valley
/// floors separating it from taller terrain: on each side, scan until a
/// strictly taller value (or the boundary) and keep the minimum seen along
/// the way; prominence = peak − max(left floor, right floor).
pub fn local_maxima(marginal: &MarginalPdf, min_prominence: f64) -> Vec<LocalOptimum> {
    let v = &marginal.values;
    let mut peaks = Vec::new();
    for i in 1..v.len().saturating_sub(1) {
        if !(v[i] > v[i - 1] && v[i] > v[i + 1]) {
            continue;
        }
        let mut left_floor = v[i];
        for k in (0..i).rev() {
            if v[k] > v[i] {
                break;
            }
            left_floor = left_floor.min(v[k]);
        }
        let mut right_floor = v[i];
        for &vk in &v[i + 1..] {
            if vk > v[i] {
                break;
            }
            right_floor = right_floor.min(vk);
        }
        if v[i] - left_floor.max(right_floor) >= min_prominence {
            peaks.push(LocalOptimum { coordinate: marginal.coordinates[i], density: v[i] });
        }
    }
    peaks.sort_by(|a, b| {
        b.density
            .total_cmp(&a.density)
            .then(a.coordinate.total_cmp(&b.coordinate))
    });
    peaks
}

/// Density-based sensitivity: one minus the Shannon entropy of the node
/// masses, normalized by its maximum `ln n`. A uniform marginal scores 0, a
/// single-node mass scores 1.
pub fn concentration_index(marginal: &MarginalPdf) -> f64 {
    let n = marginal.values.len();
    if n < 2 {
        return 1.0;
    }
    let mass: f64 = marginal.values.iter().sum();
    if !(mass > 0.0) {
        return 0.0;
    }
    let mut entropy = 0.0;
    for &v in &marginal.values {
        let q = v / mass;
        if q > 0.0 {
            entropy -= q * q.ln();
        }
    }
    (1.0 - entropy / (n as f64).ln()).clamp(0.0, 1.0)
}

/// Options for the enumeration sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Likelihood temperature; `None` selects the scale-free default — the
    /// RMSE at the frozen base parameters plus 0.01 per-unit (falling back
    /// to the best grid RMSE when the base simulation itself fails).
    pub tau: Option<f64>,
    /// Integrator options shared by every node simulation.
    pub sim: SimOptions,
}

/// Dense posterior over a low-dimensional parameter grid.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    pub labels: Vec<String>,
    /// Node coordinates per swept axis.
    pub coordinates: Vec<Vec<f64>>,
    /// Cell widths per swept axis.
    pub steps: Vec<f64>,
    /// Combined P/Q fit RMSE per node, row-major with the last axis fastest;
    /// nodes whose simulation failed carry `+inf`.
    pub rmse: Vec<f64>,
    /// Normalized density, same layout, unit midpoint mass.
    pub density: Vec<f64>,
    /// Likelihood temperature actually used.
    pub tau: f64,
    /// Fit RMSE of the frozen base parameters, when their simulation ran.
    pub base_rmse: Option<f64>,
}

impl PosteriorTable {
    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn ndims(&self) -> usize {
        self.labels.len()
    }

    /// Row-major decode (last axis fastest), matching the grid convention.
    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        let mut multi = vec![0; self.ndims()];
        for d in (0..self.ndims()).rev() {
            let n = self.coordinates[d].len();
            multi[d] = lin % n;
            lin /= n;
        }
        multi
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.coordinates)
            .fold(0, |lin, (&k, coords)| lin * coords.len() + k)
    }

    /// Node indices and coordinates of the density mode; ties break toward
    /// the lower linear index, i.e. the lower coordinates.
    pub fn mode(&self) -> Result<(Vec<usize>, Vec<f64>), EstimateError> {
        let lin = argmax_strict(&self.density).ok_or(EstimateError::DegenerateDensity)?;
        let multi = self.multi_index(lin);
        let coords = multi.iter().enumerate().map(|(d, &k)| self.coordinates[d][k]).collect();
        Ok((multi, coords))
    }

    /// Midpoint mass of the table; 1 up to round-off.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.steps.iter().product::<f64>()
    }

    /// Univariate marginal of the table along `dim`.
    pub fn marginal(&self, dim: usize) -> Result<MarginalPdf, EstimateError> {
        if dim >= self.ndims() {
            return Err(EstimateError::DimOutOfRange { dim, ndims: self.ndims() });
        }
        let cell_other: f64 =
            self.steps.iter().enumerate().filter(|&(d, _)| d != dim).map(|(_, &h)| h).product();
        let mut values = vec![0.0; self.coordinates[dim].len()];
        for (lin, &p) in self.density.iter().enumerate() {
            values[self.multi_index(lin)[dim]] += p * cell_other;
        }
        Ok(MarginalPdf {
            label: self.labels[dim].clone(),
            coordinates: self.coordinates[dim].clone(),
            values,
        })
    }
}

fn node_rmse(params: &CompositeLoadParams, trace: &[BusMeasurement], sim: &SimOptions) -> f64 {
    match simulate_response(params, trace, sim) {
        Ok(resp) => resp.rmse_combined(trace).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

/// Gaussian likelihood score; an infinite misfit scores zero even at
/// infinite temperature, so infeasible nodes never carry mass.
fn likelihood_score(rmse: f64, tau: f64) -> f64 {
    if !rmse.is_finite() {
        return 0.0;
    }
    let z = rmse / tau;
    (-0.5 * z * z).exp()
}

/// Dense enumeration reference: simulates every node of a ≤ 3-dimensional
/// parameter grid against `trace` and scores it with a Gaussian likelihood
/// in the combined P/Q RMSE, `exp(−rmse² / (2 τ²))`, normalized to unit
/// midpoint mass. Parameters not on the grid stay frozen at `base`.
///
/// Failed node simulations (infeasible operating point, divergence) get
/// infinite RMSE and zero density. Nodes are simulated across the thread
/// pool and merged by node index, so the output is deterministic regardless
/// of scheduling.
pub fn brute_force_posterior(
    domain: &DiscretizedDomain,
    trace: &[BusMeasurement],
    base: &CompositeLoadParams,
    options: &SweepOptions,
) -> Result<PosteriorTable, EstimateError> {
    let ndims = domain.ndims();
    if ndims > MAX_SWEEP_DIMS {
        return Err(EstimateError::SweepTooLarge { got: ndims, max: MAX_SWEEP_DIMS });
    }
    for spec in domain.specs() {
        if !ESTIMABLE_PARAMS.contains(&spec.label.as_str()) {
            return Err(EstimateError::UnknownParameterAxis(spec.label.clone()));
        }
    }
    if let Some(tau) = options.tau {
        if !(tau > 0.0) {
            return Err(EstimateError::NonPositiveTemperature(tau));
        }
    }

    let rmse: Vec<f64> = (0..domain.total_nodes())
        .into_par_iter()
        .map(|lin| {
            let mut params = *base;
            for (d, &k) in domain.linear_to_multi(lin).iter().enumerate() {
                params.set(&domain.spec(d).label, domain.node(d, k));
            }
            node_rmse(&params, trace, &options.sim)
        })
        .collect();

    let base_rmse = {
        let r = node_rmse(base, trace, &options.sim);
        r.is_finite().then_some(r)
    };
    let tau = match options.tau {
        Some(t) => t,
        None => {
            let reference = base_rmse.unwrap_or_else(|| {
                rmse.iter().copied().filter(|r| r.is_finite()).fold(f64::INFINITY, f64::min)
            });
            if !reference.is_finite() {
                return Err(EstimateError::DegenerateDensity);
            }
            reference + 0.01
        }
    };

    let mut density: Vec<f64> = rmse.iter().map(|&r| likelihood_score(r, tau)).collect();
    let cell: f64 = (0..ndims).map(|d| domain.step(d)).product();
    let mass: f64 = density.iter().sum::<f64>() * cell;
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(EstimateError::DegenerateDensity);
    }
    for v in &mut density {
        *v /= mass;
    }

    Ok(PosteriorTable {
        labels: domain.specs().iter().map(|s| s.label.clone()).collect(),
        coordinates: (0..ndims).map(|d| domain.nodes(d)).collect(),
        steps: (0..ndims).map(|d| domain.step(d)).collect(),
        rmse,
        density,
        tau,
        base_rmse,
    })
}

/// First-order variance index of the sweep's RMSE response, per swept axis:
/// the variance of the per-level mean RMSE divided by the total RMSE
/// variance, both over the full factorial with uniform node weights.
/// Infeasible nodes are left out of every average; a flat response scores 0.
pub fn variance_indices(table: &PosteriorTable) -> Vec<(String, f64)> {
    let finite: Vec<(usize, f64)> = table
        .rmse
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_finite())
        .map(|(i, &r)| (i, r))
        .collect();
    let n = finite.len() as f64;
    if finite.is_empty() {
        return table.labels.iter().map(|l| (l.clone(), 0.0)).collect();
    }
    let mean = finite.iter().map(|&(_, r)| r).sum::<f64>() / n;
    let var = finite.iter().map(|&(_, r)| (r - mean) * (r - mean)).sum::<f64>() / n;
    let mut out = Vec::with_capacity(table.labels.len());
    for (d, label) in table.labels.iter().enumerate() {
        if var <= 0.0 {
            out.push((label.clone(), 0.0));
            continue;
        }
        let levels = table.coordinates[d].len();
        let mut sums = vec![0.0; levels];
        let mut counts = vec![0usize; levels];
        for &(lin, r) in &finite {
            let k = table.multi_index(lin)[d];
            sums[k] += r;
            counts[k] += 1;
        }
        let mut between = 0.0;
        for k in 0..levels {
            if counts[k] == 0 {
                continue;
            }
            let m = sums[k] / counts[k] as f64;
            between += counts[k] as f64 / n * (m - mean) * (m - mean);
        }
        out.push((label.clone(), between / var));
    }
    out
}

/// Sensitivity of the fit to one parameter axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityIndex {
    pub label: String,
    /// Density-based index; see [`concentration_index`].
    pub concentration: f64,
    /// Sweep-based first-order index, present when the parameter was part
    /// of a brute-force sweep; see [`variance_indices`].
    pub variance_index: Option<f64>,
}

/// Both sensitivity indices for every parameter axis of `domain`.
///
/// The density-based concentration is always computed; the variance index
/// is filled in for the axes covered by `sweep`.
pub fn sensitivity_indices(
    density: &TtVector,
    domain: &DiscretizedDomain,
    sweep: Option<&PosteriorTable>,
) -> Result<Vec<SensitivityIndex>, EstimateError> {
    let variance: Vec<(String, f64)> = sweep.map(variance_indices).unwrap_or_default();
    let mut out = Vec::new();
    for dim in 0..domain.ndims() {
        if domain.spec(dim).kind != AxisKind::Parameter {
            continue;
        }
        let m = marginal(density, domain, dim)?;
        let concentration = concentration_index(&m);
        let variance_index = variance.iter().find(|(l, _)| *l == m.label).map(|&(_, v)| v);
        out.push(SensitivityIndex { label: m.label, concentration, variance_index });
    }
    Ok(out)
}

/// Model response at an estimate, with its misfit against the trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub response: ResponseTrace,
    pub rmse_p: f64,
    pub rmse_q: f64,
}

impl FitReport {
    /// Scalar score combining both channels (root mean of the two MSEs).
    pub fn rmse_combined(&self) -> f64 {
        ((self.rmse_p * self.rmse_p + self.rmse_q * self.rmse_q) / 2.0).sqrt()
    }
}

/// Simulates the composite model at `params` and scores it against the
/// measured powers. Simulation failures propagate.
pub fn response_from_estimate(
    params: &CompositeLoadParams,
    trace: &[BusMeasurement],
    sim: &SimOptions,
) -> Result<FitReport, EstimateError> {
    let response = simulate_response(params, trace, sim)?;
    let rmse_p = response.rmse_p(trace)?;
    let rmse_q = response.rmse_q(trace)?;
    Ok(FitReport { response, rmse_p, rmse_q })
}

/// Stationary-solver provenance recorded alongside an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub eigenvalue: f64,
    pub residual_bound: f64,
    pub shift_used: f64,
}

impl From<&StationaryReport> for SolverDiagnostics {
    fn from(report: &StationaryReport) -> Self {
        SolverDiagnostics {
            iterations: report.iterations.len(),
            converged: report.converged,
            eigenvalue: report.eigenvalue,
            residual_bound: report.residual_bound,
            shift_used: report.shift_used,
        }
    }
}

/// Mode of one parameter marginal with its runner-up optima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub label: String,
    /// Estimated value: the mode node coordinate, or a sub-cell refinement
    /// when enabled.
    pub value: f64,
    /// Marginal density at the mode node.
    pub density: f64,
    /// Prominent interior maxima of the marginal, density-descending.
    pub local_optima: Vec<LocalOptimum>,
}

/// Full output of a density-based estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    /// Best estimate: the frozen base values overwritten at every
    /// parameter grid axis by that axis' marginal mode.
    pub estimate: CompositeLoadParams,
    pub parameters: Vec<ParameterEstimate>,
    /// Univariate marginals for every grid axis, state axes included.
    pub marginals: Vec<MarginalPdf>,
    pub rmse_p: f64,
    pub rmse_q: f64,
    pub diagnostics: Option<SolverDiagnostics>,
}

/// Options for [`summarize_density`].
#[derive(Debug, Clone)]
pub struct SummaryOptions {
    /// Local-optima prominence threshold, as a fraction of the marginal's
    /// peak density.
    pub prominence_fraction: f64,
    /// Report sub-cell modes via [`parabolic_mode`] instead of raw node
    /// coordinates. Off by default: estimates then sit exactly on grid
    /// nodes.
    pub refine: bool,
    pub sim: SimOptions,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions { prominence_fraction: 0.05, refine: false, sim: SimOptions::default() }
    }
}

/// Turns a joint density into parameter estimates plus a fit report.
///
/// Marginals are extracted for every axis; each parameter axis' mode
/// overwrites the corresponding entry of `base`, and the resulting
/// parameter set is simulated against `trace` for the fit RMSEs.
pub fn summarize_density(
    density: &TtVector,
    domain: &DiscretizedDomain,
    base: &CompositeLoadParams,
    trace: &[BusMeasurement],
    diagnostics: Option<SolverDiagnostics>,
    options: &SummaryOptions,
) -> Result<EstimationResult, EstimateError> {
    let mut marginals = Vec::with_capacity(domain.ndims());
    for dim in 0..domain.ndims() {
        marginals.push(marginal(density, domain, dim)?);
    }
    let mut estimate = *base;
    let mut parameters = Vec::new();
    for (dim, m) in marginals.iter().enumerate() {
        if domain.spec(dim).kind != AxisKind::Parameter {
            continue;
        }
        let node = m.argmax()?;
        let value = if options.refine { parabolic_mode(m)? } else { m.coordinates[node] };
        if !estimate.set(&m.label, value) {
            return Err(EstimateError::UnknownParameterAxis(m.label.clone()));
        }
        parameters.push(ParameterEstimate {
            label: m.label.clone(),
            value,
            density: m.values[node],
            local_optima: local_maxima(m, options.prominence_fraction * m.values[node]),
        });
    }
    let fit = response_from_estimate(&estimate, trace, &options.sim)?;
    Ok(EstimationResult {
        estimate,
        parameters,
        marginals,
        rmse_p: fit.rmse_p,
        rmse_q: fit.rmse_q,
        diagnostics,
    })
}

/// Writes a univariate marginal as `coordinate,density` CSV.
pub fn write_marginal_csv<W: Write>(mut w: W, marginal: &MarginalPdf) -> Result<(), EstimateError> {
    writeln!(w, "coordinate,density")?;
    for (x, v) in marginal.coordinates.iter().zip(&marginal.values) {
        writeln!(w, "{x},{v}")?;
    }
    Ok(())
}

/// Writes a pair marginal as `coord_a,coord_b,density` CSV, row-major.
pub fn write_joint_csv<W: Write>(mut w: W, joint: &JointPdf) -> Result<(), EstimateError> {
    writeln!(w, "coord_a,coord_b,density")?;
    for (i, a) in joint.coords_a.iter().enumerate() {
        for (j, b) in joint.coords_b.iter().enumerate() {
            writeln!(w, "{a},{b},{}", joint.value(i, j))?;
        }
    }
    Ok(())
}

/// Writes the estimation result as one pretty-printed JSON document. The
/// field order is fixed and floats print shortest-round-trip, so identical
/// results serialize to identical bytes.
pub fn write_result_json<W: Write>(
    mut w: W,
    result: &EstimationResult,
) -> Result<(), EstimateError> {
    serde_json::to_writer_pretty(&mut w, result)?;
    writeln!(w)?;
    Ok(())
}
