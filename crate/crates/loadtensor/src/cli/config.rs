//! Run configuration: one JSON file describes a complete run.
//!
//! A [`RunConfig`] bundles everything a run needs — file locations, the
//! discretization box, the frozen parameter values, solver knobs, and
//! (optionally) a synthetic-disturbance recipe. [`load_config`] parses and
//! validates it; every rejection names the offending field so a config
//! typo is a one-line fix, not a stack trace.
//!
//! Relative `trace` and `output_dir` paths are resolved against the
//! directory containing the config file, so a config travels with its
//! data. Whether the trace file actually exists is checked when the
//! pipeline opens it, not here: a config may legitimately point at a trace
//! that a `synth` run is about to create.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{build_grid, AxisKind, GridError, GridSpec};
use crate::load_model::{
    CompositeLoadParams, ModelError, MotorState, ESTIMABLE_PARAMS, STATE_LABELS,
};

/// What a run does end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Forward-simulate the frozen parameters against the measured trace.
    Simulate,
    /// Solve the stationary joint density, reweight it by the measurement
    /// likelihood, and report per-parameter estimates.
    Estimate,
    /// Like `Estimate`, then rank the parameter axes by sensitivity.
    Sensitivity,
    /// Dense brute-force posterior over the parameter axes alone; the
    /// reference the tensor-train path is judged against.
    Oracle,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Simulate => "simulate",
            RunMode::Estimate => "estimate",
            RunMode::Sensitivity => "sensitivity",
            RunMode::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solver and weighting knobs. Every field has a default, so a minimal
/// config can omit the whole section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Artificial diffusion applied to every state axis.
    pub sigma: f64,
    /// Stationary-solver convergence tolerance.
    pub tolerance: f64,
    /// Relative tolerance for tensor-train rounding between iterations.
    pub round_tolerance: f64,
    /// Rank budget for the density.
    pub max_rank: usize,
    /// Iteration cap for the stationary solve.
    pub max_iterations: usize,
    /// Seed for every randomized ingredient (cross approximation probes,
    /// misfit multistart, synthetic noise). Equal seeds give equal output.
    pub seed: u64,
    /// Likelihood temperature; `null` selects a scale-free default from
    /// the approximate minimum misfit over the grid.
    pub temperature: Option<f64>,
    /// Time window `[t0, t1]` averaged into the disturbed operating point;
    /// `null` auto-detects the disturbance (where the voltage deviates most
    /// from its first-sample value) and keeps its second half, skipping the
    /// initial transient. Set it explicitly when the response needs longer
    /// than half the disturbance to settle.
    pub window: Option<[f64; 2]>,
    /// Report sub-cell parabolic modes instead of raw node coordinates.
    pub refine: bool,
    /// Prominence threshold for reported runner-up optima, as a fraction
    /// of each marginal's peak.
    pub prominence_fraction: f64,
    /// Largest integrator step for trace simulation, seconds.
    pub max_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            sigma: 0.05,
            tolerance: 1e-8,
            round_tolerance: 1e-10,
            max_rank: 100,
            max_iterations: 40,
            seed: 0,
            temperature: None,
            window: None,
            refine: false,
            prominence_fraction: 0.05,
            max_step: 1e-3,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<(), ConfigError> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(invalid("solver.sigma", format!("needs a finite value >= 0, got {}", self.sigma)));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("solver.tolerance", format!("needs a value > 0, got {}", self.tolerance)));
        }
        if !(self.round_tolerance > 0.0) {
            return Err(invalid(
                "solver.round_tolerance",
                format!("needs a value > 0, got {}", self.round_tolerance),
            ));
        }
        if self.max_rank == 0 {
            return Err(invalid("solver.max_rank", "needs at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("solver.max_iterations", "needs at least 1"));
        }
        if let Some(tau) = self.temperature {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(invalid("solver.temperature", format!("needs a finite value > 0, got {tau}")));
            }
        }
        if let Some([t0, t1]) = self.window {
            if !t0.is_finite() || !t1.is_finite() || t0 >= t1 {
                return Err(invalid("solver.window", format!("needs t0 < t1, got [{t0}, {t1}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.prominence_fraction) {
            return Err(invalid(
                "solver.prominence_fraction",
                format!("needs a value in [0, 1], got {}", self.prominence_fraction),
            ));
        }
        if !(self.max_step > 0.0) || !self.max_step.is_finite() {
            return Err(invalid("solver.max_step", format!("needs a finite value > 0, got {}", self.max_step)));
        }
        Ok(())
    }
}

/// Shape of a synthetic voltage disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Voltage steps to `level` at `t_start` and stays there.
    Step,
    /// Voltage ramps linearly from 1 to `level` over `[t_start, t_stop]`,
    /// then holds `level`.
    Ramp,
    /// Voltage dips to `level` on `[t_start, t_stop)` and recovers.
    Sag,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Step => "step",
            ProfileKind::Ramp => "ramp",
            ProfileKind::Sag => "sag",
        }
    }
}

/// Recipe for a synthetic measured trace: a voltage disturbance applied to
/// a steady baseline, with the power columns filled in by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub profile: ProfileKind,
    /// Trace length, seconds.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Sample spacing, seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Disturbance onset. Must be positive: the first sample anchors the
    /// pre-disturbance baseline.
    #[serde(default = "default_t_start")]
    pub t_start: f64,
    /// Disturbance end; `null` keeps it active until `t_end`.
    #[serde(default)]
    pub t_stop: Option<f64>,
    /// Disturbed voltage, per unit.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Baseline active power at `V = 1`.
    #[serde(default = "default_p0")]
    pub p0: f64,
    /// Baseline reactive power at `V = 1`.
    #[serde(default = "default_q0")]
    pub q0: f64,
    /// Standard deviation of additive Gaussian noise on the power columns;
    /// 0 keeps the trace exactly self-consistent with the simulator.
    #[serde(default)]
    pub noise: f64,
}

fn default_t_end() -> f64 {
    2.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_t_start() -> f64 {
    0.5
}
fn default_level() -> f64 {
    0.95
}
fn default_p0() -> f64 {
    1.0
}
fn default_q0() -> f64 {
    0.3
}

impl SynthSpec {
    /// Disturbance end: the explicit stop, or the end of the trace.
    pub fn stop(&self) -> f64 {
        self.t_stop.unwrap_or(self.t_end)
    }

    /// Voltage at time `t` under this profile (1.0 outside the disturbance).
    pub fn voltage_at(&self, t: f64) -> f64 {
        let stop = self.stop();
        match self.profile {
            ProfileKind::Step => {
                if t >= self.t_start {
                    self.level
                } else {
                    1.0
                }
            }
            ProfileKind::Sag => {
                if t >= self.t_start && t < stop {
                    self.level
                } else {
                    1.0
                }
            }
            ProfileKind::Ramp => {
                if t < self.t_start {
                    1.0
                } else if t >= stop {
                    self.level
                } else {
                    1.0 + (self.level - 1.0) * (t - self.t_start) / (stop - self.t_start)
                }
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("synth.dt", format!("needs a finite value > 0, got {}", self.dt)));
        }
        if !(self.t_end > self.dt) || !self.t_end.is_finite() {
            return Err(invalid("synth.t_end", format!("needs a value > dt = {}, got {}", self.dt, self.t_end)));
        }
        if !(self.t_start > 0.0) || self.t_start >= self.t_end {
            return Err(invalid(
                "synth.t_start",
                format!(
                    "the disturbance must start after the first sample (it anchors the baseline) \
                     and before t_end = {}; got {}",
                    self.t_end, self.t_start
                ),
            ));
        }
        if let Some(stop) = self.t_stop {
            if !(stop > self.t_start) || stop > self.t_end {
                return Err(invalid(
                    "synth.t_stop",
                    format!("needs a value in ({}, {}], got {stop}", self.t_start, self.t_end),
                ));
            }
        }
        if !(self.level > 0.0) || !self.level.is_finite() {
            return Err(invalid("synth.level", format!("needs a finite voltage > 0, got {}", self.level)));
        }
        if !(self.p0 > 0.0) || !self.p0.is_finite() {
            return Err(invalid("synth.p0", format!("the baseline active power must be > 0, got {}", self.p0)));
        }
        if !self.q0.is_finite() {
            return Err(invalid("synth.q0", format!("needs a finite value, got {}", self.q0)));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(invalid("synth.noise", format!("needs a finite value >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// One complete run description, as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Measured trace CSV. Relative paths are resolved against the config
    /// file's directory.
    pub trace: PathBuf,
    /// Directory receiving every artifact the run writes.
    pub output_dir: PathBuf,
    /// Joint grid axes, states
    /// (`v_d_prime`, `v_q_prime`, `slip`) first, then parameters. Ignored
    /// by `simulate`; for `oracle` only the parameter axes are used.
    #[serde(default)]
    pub grid: Vec<GridSpec>,
    /// Frozen values for every parameter off the grid, and the initial
    /// guess for those on it.
    pub parameters: CompositeLoadParams,
    /// Optional motor state overriding the equilibrium initial condition
    /// in forward simulation.
    #[serde(default)]
    pub initial_state: Option<MotorState>,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Parameter-axis pairs whose joint density tables are emitted.
    #[serde(default)]
    pub joint_pairs: Vec<[String; 2]>,
    /// Synthetic-trace recipe, consumed by the `synth` subcommand.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

impl RunConfig {
    /// Number of parameter axes on the grid.
    pub fn n_parameter_axes(&self) -> usize {
        self.grid.iter().filter(|s| s.kind == AxisKind::Parameter).count()
    }

    /// Total number of joint grid nodes (product of per-axis counts);
    /// 0 for an empty grid.
    pub fn grid_total_nodes(&self) -> usize {
        if self.grid.is_empty() {
            0
        } else {
            self.grid.iter().map(|s| s.count).product()
        }
    }

    /// Checks every cross-field constraint; errors name the field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.parameters.validate()?;
        self.solver.validate()?;
        if !self.grid.is_empty() {
            build_grid(self.grid.clone())?;
            for spec in &self.grid {
                let label = spec.label.as_str();
                match spec.kind {
                    AxisKind::State if !STATE_LABELS.contains(&label) => {
                        return Err(invalid(
                            "grid",
                            format!("`{label}` is not a motor state axis; the states are {STATE_LABELS:?}"),
                        ));
                    }
                    AxisKind::Parameter if !ESTIMABLE_PARAMS.contains(&label) => {
                        return Err(invalid(
                            "grid",
                            format!("`{label}` is not an estimable parameter; choose from {ESTIMABLE_PARAMS:?}"),
                        ));
                    }
                    _ => {}
                }
            }
        }
        match self.mode {
            RunMode::Simulate => {}
            RunMode::Estimate | RunMode::Sensitivity => {
                let states: Vec<&str> = self
                    .grid
                    .iter()
                    .filter(|s| s.kind == AxisKind::State)
                    .map(|s| s.label.as_str())
                    .collect();
                if states != STATE_LABELS {
                    return Err(invalid(
                        "grid",
                        format!(
                            "{} mode needs the state axes {STATE_LABELS:?} in that order, got {states:?}",
                            self.mode
                        ),
                    ));
                }
                if self.n_parameter_axes() == 0 {
                    return Err(invalid(
                        "grid",
                        format!("{} mode needs at least one parameter axis", self.mode),
                    ));
                }
            }
            RunMode::Oracle => {
                if self.n_parameter_axes() == 0 {
                    return Err(invalid("grid", "oracle mode needs at least one parameter axis"));
                }
            }
        }
        for pair in &self.joint_pairs {
            if pair[0] == pair[1] {
                return Err(invalid("joint_pairs", format!("pair repeats `{}`", pair[0])));
            }
            for label in pair {
                if !self.grid.iter().any(|s| &s.label == label) {
                    return Err(invalid("joint_pairs", format!("`{label}` is not a grid axis")));
                }
            }
        }
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

/// Reads, path-resolves, and validates a run config.
///
/// Schema errors (missing or unknown fields, wrong types) surface with the
/// field named by the JSON parser; semantic errors (inverted bounds, alien
/// axis labels, non-positive tolerances, …) name the field themselves.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut config: RunConfig = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.trace = resolve(base, &config.trace);
    config.output_dir = resolve(base, &config.output_dir);
    config.validate()?;
    Ok(config)
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_relative() {
        base.join(path)
    } else {
        path.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};
    use std::io::Write as _;

    fn params_json() -> Value {
        json!({
            "omega": 0.5, "a_p": 0.001, "b_p": 0.5642, "a_q": 0.001, "b_q": 0.6626,
            "r_s": 0.049, "x_s": 0.096, "r_r": 0.044, "x_r": 0.244, "x_m": 2.96, "h": 0.93
        })
    }

    fn minimal(mode: &str) -> Value {
        json!({
            "mode": mode,
            "trace": "trace.csv",
            "output_dir": "out",
            "parameters": params_json(),
        })
    }

    fn estimation_grid() -> Value {
        json!([
            { "label": "v_d_prime", "lower": 0.4, "upper": 1.2, "count": 17, "kind": "state" },
            { "label": "v_q_prime", "lower": -0.6, "upper": 0.6, "count": 17, "kind": "state" },
            { "label": "slip", "lower": 0.0, "upper": 0.5, "count": 17, "kind": "state" },
            { "label": "omega", "lower": 0.0, "upper": 1.0, "count": 33, "kind": "parameter" },
            { "label": "x_s", "lower": 0.02, "upper": 0.3, "count": 33, "kind": "parameter" }
        ])
    }

    fn load_value(value: &Value) -> Result<RunConfig, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut file = std::fs::File::create(&path).unwrap();
        write!(file, "{value}").unwrap();
        drop(file);
        load_config(&path)
    }

    #[test]
    fn minimal_simulate_config_applies_defaults() {
        let config = load_value(&minimal("simulate")).unwrap();
        assert_eq!(config.mode, RunMode::Simulate);
        assert!(config.grid.is_empty());
        assert_eq!(config.solver, SolverSettings::default());
        assert_eq!(config.solver.max_rank, 100);
        assert!(config.solver.temperature.is_none());
        assert!(config.synth.is_none());
        assert!(config.joint_pairs.is_empty());
    }

    #[test]
    fn relative_paths_resolve_against_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut file = std::fs::File::create(&path).unwrap();
        write!(file, "{}", minimal("simulate")).unwrap();
        drop(file);
        let config = load_config(&path).unwrap();
        assert_eq!(config.trace, dir.path().join("trace.csv"));
        assert_eq!(config.output_dir, dir.path().join("out"));
    }

    #[test]
    fn unknown_top_level_field_is_named() {
        let mut value = minimal("simulate");
        value["surprise"] = json!(1);
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("surprise"), "{err}");
    }

    #[test]
    fn missing_required_field_is_named() {
        let mut value = minimal("simulate");
        value.as_object_mut().unwrap().remove("parameters");
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("parameters"), "{err}");
    }

    #[test]
    fn invalid_frozen_parameter_is_named() {
        let mut value = minimal("simulate");
        value["parameters"]["x_m"] = json!(-1.0);
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("x_m"), "{err}");
    }

    #[test]
    fn inverted_axis_bounds_rejected_naming_the_axis() {
        let mut value = minimal("estimate");
        value["grid"] = estimation_grid();
        value["grid"][4] = json!({
            "label": "h", "lower": 2.0, "upper": 1.0, "count": 9, "kind": "parameter"
        });
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("`h`"), "{err}");
        assert!(err.contains("lower bound"), "{err}");
    }

    #[test]
    fn unknown_parameter_axis_rejected_naming_the_label() {
        let mut value = minimal("estimate");
        value["grid"] = estimation_grid();
        value["grid"][4]["label"] = json!("zeta");
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("zeta"), "{err}");
        assert!(err.contains("estimable"), "{err}");
    }

    #[test]
    fn estimate_mode_needs_all_state_axes_in_order() {
        let mut value = minimal("estimate");
        let mut grid = estimation_grid();
        let swapped = grid[1].clone();
        grid[1] = grid[2].clone();
        grid[2] = swapped;
        value["grid"] = grid;
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("state axes"), "{err}");

        let mut value = minimal("estimate");
        let without_states = Value::Array(
            estimation_grid().as_array().unwrap()[3..].to_vec(),
        );
        value["grid"] = without_states;
        assert!(load_value(&value).is_err());
    }

    #[test]
    fn estimate_mode_needs_a_parameter_axis() {
        let mut value = minimal("estimate");
        value["grid"] =
            Value::Array(estimation_grid().as_array().unwrap()[..3].to_vec());
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("parameter axis"), "{err}");
    }

    #[test]
    fn oracle_mode_accepts_parameter_only_grid() {
        let mut value = minimal("oracle");
        value["grid"] = json!([
            { "label": "omega", "lower": 0.0, "upper": 1.0, "count": 33, "kind": "parameter" }
        ]);
        let config = load_value(&value).unwrap();
        assert_eq!(config.n_parameter_axes(), 1);
    }

    #[test]
    fn full_grid_node_total_is_the_axis_product() {
        let mut value = minimal("estimate");
        value["grid"] = estimation_grid();
        let config = load_value(&value).unwrap();
        assert_eq!(config.grid_total_nodes(), 17 * 17 * 17 * 33 * 33);
        assert_eq!(config.n_parameter_axes(), 2);
    }

    #[test]
    fn window_must_be_ordered() {
        let mut value = minimal("simulate");
        value["solver"] = json!({ "window": [1.0, 0.5] });
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("solver.window"), "{err}");
    }

    #[test]
    fn temperature_must_be_positive() {
        let mut value = minimal("simulate");
        value["solver"] = json!({ "temperature": 0.0 });
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("solver.temperature"), "{err}");
    }

    #[test]
    fn negative_diffusion_rejected() {
        let mut value = minimal("simulate");
        value["solver"] = json!({ "sigma": -0.1 });
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("solver.sigma"), "{err}");
    }

    #[test]
    fn joint_pair_labels_must_be_grid_axes() {
        let mut value = minimal("estimate");
        value["grid"] = estimation_grid();
        value["joint_pairs"] = json!([["omega", "x_r"]]);
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("joint_pairs"), "{err}");
        assert!(err.contains("x_r"), "{err}");

        let mut value = minimal("estimate");
        value["grid"] = estimation_grid();
        value["joint_pairs"] = json!([["omega", "omega"]]);
        let err = load_value(&value).unwrap_err().to_string();
        assert!(err.contains("repeats"), "{err}");
    }

    #[test]
    fn synth_section_is_validated() {
        let base = json!({
            "profile": "sag", "t_end": 1.6, "dt": 0.02,
            "t_start": 0.4, "t_stop": 1.0, "level": 0.9
        });

        let mut value = minimal("simulate");
        value["synth"] = base.clone();
        let config = load_value(&value).unwrap();
        let synth = config.synth.unwrap();
        assert_eq!(synth.profile, ProfileKind::Sag);
        assert_eq!(synth.p0, 1.0);
        assert_eq!(synth.q0, 0.3);
        assert_eq!(synth.noise, 0.0);

        for (field, patch) in [
            ("synth.dt", json!({ "dt": 0.0 })),
            ("synth.t_start", json!({ "t_start": 0.0 })),
            ("synth.t_stop", json!({ "t_stop": 0.2 })),
            ("synth.level", json!({ "level": 0.0 })),
            ("synth.p0", json!({ "p0": -1.0 })),
            ("synth.noise", json!({ "noise": -0.5 })),
        ] {
            let mut value = minimal("simulate");
            let mut section = base.clone();
            for (k, v) in patch.as_object().unwrap() {
                section[k] = v.clone();
            }
            value["synth"] = section;
            let err = load_value(&value).unwrap_err().to_string();
            assert!(err.contains(field), "expected `{field}` in: {err}");
        }
    }

    #[test]
    fn sag_profile_voltage_shape() {
        let spec = SynthSpec {
            profile: ProfileKind::Sag,
            t_end: 1.6,
            dt: 0.02,
            t_start: 0.4,
            t_stop: Some(1.0),
            level: 0.9,
            p0: 1.0,
            q0: 0.3,
            noise: 0.0,
        };
        assert_eq!(spec.voltage_at(0.0), 1.0);
        assert_eq!(spec.voltage_at(0.4), 0.9);
        assert_eq!(spec.voltage_at(0.99), 0.9);
        assert_eq!(spec.voltage_at(1.0), 1.0);

        let step = SynthSpec { profile: ProfileKind::Step, t_stop: None, ..spec.clone() };
        assert_eq!(step.voltage_at(1.5), 0.9);

        let ramp = SynthSpec { profile: ProfileKind::Ramp, ..spec };
        assert_eq!(ramp.voltage_at(0.4), 1.0);
        assert!((ramp.voltage_at(0.7) - 0.95).abs() < 1e-12);
        assert_eq!(ramp.voltage_at(1.2), 0.9);
    }

    #[test]
    fn mode_names_round_trip() {
        for (mode, name) in [
            (RunMode::Simulate, "simulate"),
            (RunMode::Estimate, "estimate"),
            (RunMode::Sensitivity, "sensitivity"),
            (RunMode::Oracle, "oracle"),
        ] {
            assert_eq!(mode.as_str(), name);
            assert_eq!(serde_json::to_value(mode).unwrap(), json!(name));
            assert_eq!(serde_json::from_value::<RunMode>(json!(name)).unwrap(), mode);
        }
    }
}
