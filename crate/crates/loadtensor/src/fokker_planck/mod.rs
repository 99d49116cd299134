//! Discretized Fokker–Planck operator over the joint state/parameter grid,
//! with stationary and transient density solvers.
//!
//! The generator advects probability mass along per-state drift fields and
//! adds a small artificial diffusion that keeps the stationary problem
//! well-posed. Parameter axes carry no differential action, so the operator
//! is block-diagonal across parameter slices; measurement information enters
//! separately (see [`measurement`]): either as a static likelihood
//! reweighting of the stationary density or as a misfit sink folded into the
//! generator for transient evolution.

mod drift;
mod evolve;
mod measurement;
mod operator;
mod stationary;

pub use drift::{build_all_drift_fields, build_drift_field, FieldOptions, NodeBaselines};
pub use evolve::{evolve_density, EvolveOptions, EvolveReport};
pub use measurement::{
    approximate_min_misfit, average_window, composite_power_at, likelihood_field, misfit_field,
    posterior_reweight, with_sink, OperatingPoint,
};
pub use operator::{assemble_fp_operator, AssemblyOptions, BoundaryCondition, FpOperator};
pub use stationary::{
    stationary_density, StationaryIteration, StationaryReport, StationarySolveConfig,
};

use crate::grid::GridError;
use crate::load_model::ModelError;
use crate::tt::{TtError, TtVector};
use thiserror::Error;

/// One drift component `mu_i(x, theta)` sampled on the full joint grid.
#[derive(Debug, Clone)]
pub struct DriftField {
    /// Label of the state axis this component differentiates along.
    pub label: String,
    /// Sampled drift values, in grid mode order.
    pub field: TtVector,
}

#[derive(Debug, Error)]
pub enum FpError {
    #[error("expected one drift field per state axis ({expected}), got {got}")]
    DriftCount { expected: usize, got: usize },
    #[error("drift field {dim} has modes {got:?}, expected {expected:?}")]
    FieldModes { dim: usize, got: Vec<usize>, expected: Vec<usize> },
    #[error("drift field {dim} is labelled `{got}` but state axis {dim} is `{expected}`")]
    FieldLabel { dim: usize, got: String, expected: String },
    #[error("diffusion list has {got} entries, expected {expected} (one per state axis)")]
    DiffusionCount { expected: usize, got: usize },
    #[error("negative diffusion {value} on state axis {dim}")]
    NegativeDiffusion { dim: usize, value: f64 },
    #[error("grid has no state axes to differentiate")]
    NoStateAxes,
    #[error(
        "assembled operator rank {rank} reached the cap {cap}; raise the assembly rank budget"
    )]
    AssemblyRank { rank: usize, cap: usize },
    #[error(
        "motor grids need the state axes {expected:?} in that order, got {got:?}"
    )]
    StateAxes { expected: Vec<String>, got: Vec<String> },
    #[error("grid axis `{0}` is not an estimable model parameter")]
    UnknownParameterAxis(String),
    #[error("no trace samples inside the window [{t0}, {t1}]")]
    EmptyWindow { t0: f64, t1: f64 },
    #[error(
        "stationary solve stopped after {iterations} iterations: eigenvalue delta {delta:e}, \
         residual bound {residual:e}"
    )]
    StationaryNotConverged { iterations: usize, delta: f64, residual: f64 },
    #[error(
        "stationary density residual bound {residual:e} exceeds the configured limit {bound:e}"
    )]
    ResidualBound { residual: f64, bound: f64 },
    #[error("density integral vanished; cannot normalize")]
    DegenerateDensity,
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("likelihood temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error(transparent)]
    Tt(#[from] TtError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
