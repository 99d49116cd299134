//! End-to-end runs: synthetic trace generation and the four analysis modes.
//!
//! [`run_pipeline`] executes the mode a [`RunConfig`] asks for and returns a
//! [`RunReport`] listing every artifact it wrote. Failures carry the name of
//! the stage that died, and any files already written by the failed run are
//! removed so the output directory never holds a partial result set. All
//! artifacts land directly inside `config.output_dir`; nothing is written
//! anywhere else.
//!
//! The estimation flow is: read the trace, grid the joint box, anchor the
//! per-parameter-node baselines at the first sample, average the disturbance
//! window into one operating point, build the drift fields there, assemble
//! the transport operator, solve for its stationary density (uniform over
//! the parameter axes by gauge), reweight it by the measurement likelihood,
//! and summarize the result into per-parameter estimates.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cli::config::{RunConfig, RunMode, SolverSettings, SynthSpec};
use crate::estimate::{
    brute_force_posterior, joint_marginal_2d, response_from_estimate, sensitivity_indices,
    summarize_density, write_joint_csv, write_marginal_csv, write_result_json, FitReport,
    JointPdf, PosteriorTable, SensitivityIndex, SolverDiagnostics, SummaryOptions, SweepOptions,
    MAX_SWEEP_DIMS,
};
use crate::fokker_planck::{
    approximate_min_misfit, assemble_fp_operator, average_window, build_all_drift_fields,
    likelihood_field, posterior_reweight, stationary_density, AssemblyOptions, FieldOptions,
    NodeBaselines, StationaryReport, StationarySolveConfig,
};
use crate::grid::{build_grid, AxisKind, DiscretizedDomain, GridSpec};
use crate::load_model::{
    read_trace_csv, self_consistent_trace, write_trace_csv, BusMeasurement, SimOptions,
};
use crate::tt::TtVector;

/// Failure of one pipeline stage.
#[derive(Debug, Error)]
#[error("stage `{stage}`: {message}")]
pub struct PipelineError {
    /// Stage that failed: `config`, `trace`, `grid`, `baseline`, `window`,
    /// `drift`, `operator`, `stationary`, `likelihood`, `sweep`, `summary`,
    /// `synth`, or `artifacts`.
    pub stage: &'static str,
    pub message: String,
}

impl PipelineError {
    fn new(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError { stage, message: err.to_string() }
    }
}

/// `map_err` adapter tagging an error with its pipeline stage.
fn at<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |err| PipelineError::new(stage, err)
}

/// Summary of a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    /// Mode that ran (`synth` for synthetic generation).
    pub mode: String,
    /// Wall-clock duration, seconds.
    pub wall_time_s: f64,
    /// Stationary-solver diagnostics; `None` for modes without a solve.
    pub diagnostics: Option<SolverDiagnostics>,
    /// Every file written, all inside the configured output directory.
    pub artifacts: Vec<PathBuf>,
}

/// Collects artifacts in the output directory; on failure every file the
/// run created is removed again.
struct ArtifactSink {
    dir: PathBuf,
    created: Vec<PathBuf>,
}

impl ArtifactSink {
    fn new(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir)
            .map_err(|e| PipelineError::new("artifacts", format!("cannot create `{}`: {e}", dir.display())))?;
        Ok(ArtifactSink { dir: dir.to_path_buf(), created: Vec::new() })
    }

    /// Registers `name` for cleanup and returns its path in the output
    /// directory. Names are flattened so they cannot escape it.
    fn claim(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(sanitize_name(name));
        self.created.push(path.clone());
        path
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, PipelineError> {
        let path = self.claim(name);
        let file = File::create(&path)
            .map_err(|e| PipelineError::new("artifacts", format!("cannot create `{}`: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    fn discard(&mut self) {
        for path in self.created.drain(..) {
            let _ = fs::remove_file(path);
        }
    }

    fn into_artifacts(self) -> Vec<PathBuf> {
        self.created
    }
}

/// Maps an artifact name to a single safe path component: anything other
/// than ASCII alphanumerics, `-`, `_`, and interior dots becomes `_`.
fn sanitize_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe.trim_matches(['.', '_']).is_empty() {
        format!("artifact_{}", safe.len())
    } else {
        safe
    }
}

/// Runs the configured mode end to end.
///
/// On success every path in the report exists; on failure the error names
/// the stage that died and no file from this run is left behind.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let mut sink = ArtifactSink::new(&config.output_dir)?;
    let outcome = match config.mode {
        RunMode::Simulate => run_simulate(config, &mut sink).map(|()| None),
        RunMode::Estimate => run_estimate(config, &mut sink),
        RunMode::Sensitivity => run_sensitivity(config, &mut sink),
        RunMode::Oracle => run_oracle(config, &mut sink).map(|()| None),
    };
    match outcome {
        Ok(diagnostics) => Ok(RunReport {
            mode: config.mode.as_str().to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
            diagnostics,
            artifacts: sink.into_artifacts(),
        }),
        Err(err) => {
            sink.discard();
            Err(err)
        }
    }
}

fn sim_options(config: &RunConfig) -> SimOptions {
    SimOptions {
        max_step: config.solver.max_step,
        initial_state: config.initial_state,
        ..SimOptions::default()
    }
}

fn read_trace(config: &RunConfig) -> Result<Vec<BusMeasurement>, PipelineError> {
    read_trace_csv(&config.trace)
        .map_err(|e| PipelineError::new("trace", format!("`{}`: {e}", config.trace.display())))
}

// ---------------------------------------------------------------------------
// simulate

fn run_simulate(config: &RunConfig, sink: &mut ArtifactSink) -> Result<(), PipelineError> {
    let trace = read_trace(config)?;
    let fit = response_from_estimate(&config.parameters, &trace, &sim_options(config))
        .map_err(at("summary"))?;
    info!("forward fit: rmse_p = {:.6e}, rmse_q = {:.6e}", fit.rmse_p, fit.rmse_q);
    write_response_artifact(sink, &trace, &fit, "frozen parameters")
}

/// Writes the predicted bus powers in the measured-trace CSV layout, so the
/// file can be diffed against or re-read as a trace.
fn write_response_artifact(
    sink: &mut ArtifactSink,
    trace: &[BusMeasurement],
    fit: &FitReport,
    which: &str,
) -> Result<(), PipelineError> {
    let predicted: Vec<BusMeasurement> = trace
        .iter()
        .zip(fit.response.p.iter().zip(&fit.response.q))
        .map(|(m, (&p, &q))| BusMeasurement { p, q, ..*m })
        .collect();
    let comments = vec![
        format!("predicted bus powers at the {which}"),
        format!("rmse_p = {:.6e}, rmse_q = {:.6e}", fit.rmse_p, fit.rmse_q),
    ];
    let path = sink.claim("response.csv");
    write_trace_csv(&path, &predicted, &comments).map_err(at("artifacts"))
}

// ---------------------------------------------------------------------------
// estimate / sensitivity

/// Everything the density-based modes share: the solved, measurement-
/// reweighted joint density over the configured grid.
struct Solved {
    domain: DiscretizedDomain,
    trace: Vec<BusMeasurement>,
    posterior: TtVector,
    report: StationaryReport,
}

fn solve_posterior(config: &RunConfig) -> Result<Solved, PipelineError> {
    let trace = read_trace(config)?;
    let domain = build_grid(config.grid.clone()).map_err(at("grid"))?;
    info!(
        "grid: {} state + {} parameter axes, {} nodes",
        domain.n_state_dims(),
        domain.ndims() - domain.n_state_dims(),
        domain.total_nodes()
    );

    let anchor = trace[0];
    let baselines = NodeBaselines::new(&domain, &config.parameters, anchor.v, anchor.p, anchor.q)
        .map_err(at("baseline"))?;
    let feasible = baselines.probe_feasibility(3);
    if feasible == 0.0 {
        return Err(PipelineError::new(
            "baseline",
            "no feasible parameter combination on the probe lattice; shrink the parameter box",
        ));
    }
    info!("baseline probe: {:.0}% of lattice nodes feasible", 100.0 * feasible);

    let (t0, t1) = window_bounds(&config.solver, &trace);
    let at_op = average_window(&trace, t0, t1).map_err(at("window"))?;
    info!(
        "operating point from window [{t0:.3}, {t1:.3}] s: V = {:.4}, P = {:.4}, Q = {:.4}",
        at_op.v, at_op.p, at_op.q
    );

    let field_opts = field_options(&config.solver);
    let drifts =
        build_all_drift_fields(&domain, &baselines, &at_op, &field_opts).map_err(at("drift"))?;
    let diffusion = vec![config.solver.sigma; domain.n_state_dims()];
    let op = assemble_fp_operator(&domain, &drifts, &diffusion, &assembly_options(&config.solver))
        .map_err(at("operator"))?;

    let stationary_cfg = StationarySolveConfig {
        tol: config.solver.tolerance,
        max_iters: config.solver.max_iterations,
        max_rank: config.solver.max_rank,
        round_tol: config.solver.round_tolerance,
        ..StationarySolveConfig::default()
    };
    let (density, report) =
        stationary_density(&op, &domain, None, &stationary_cfg).map_err(at("stationary"))?;
    info!(
        "stationary solve: {} iterations, converged = {}, residual bound = {:.3e}",
        report.iterations.len(),
        report.converged,
        report.residual_bound
    );

    let (m_ref, _) = approximate_min_misfit(&domain, &baselines, &at_op, 8, config.solver.seed);
    let tau = config.solver.temperature.unwrap_or_else(|| m_ref.sqrt() + 0.01);
    info!("likelihood temperature tau = {tau:.4e} (approximate minimum misfit {m_ref:.4e})");
    let likelihood = likelihood_field(&domain, &baselines, &at_op, tau, m_ref, &field_opts)
        .map_err(at("likelihood"))?;
    let posterior = posterior_reweight(
        &density,
        &likelihood,
        &domain,
        config.solver.round_tolerance,
        config.solver.max_rank,
    )
    .map_err(at("likelihood"))?;

    Ok(Solved { domain, trace, posterior, report })
}

/// Measurement window: the configured one, or the second half of the span
/// where the voltage deviates from its first-sample value by at least half
/// the peak deviation — early disturbance samples are transient-dominated,
/// and the stationary density models the quasi-steady response. A
/// (near-)constant trace falls back to its full extent.
fn window_bounds(solver: &SolverSettings, trace: &[BusMeasurement]) -> (f64, f64) {
    if let Some([t0, t1]) = solver.window {
        return (t0, t1);
    }
    let v0 = trace[0].v;
    let span = (trace[0].t, trace[trace.len() - 1].t);
    let max_dev = trace.iter().map(|m| (m.v - v0).abs()).fold(0.0, f64::max);
    if max_dev < 1e-9 {
        return span;
    }
    let (mut t0, mut t1) = (span.1, span.0);
    for m in trace {
        if (m.v - v0).abs() >= 0.5 * max_dev {
            t0 = t0.min(m.t);
            t1 = t1.max(m.t);
        }
    }
    (0.5 * (t0 + t1), t1)
}

fn field_options(solver: &SolverSettings) -> FieldOptions {
    let mut opts = FieldOptions::default();
    opts.cross.seed = solver.seed;
    opts
}

fn assembly_options(solver: &SolverSettings) -> AssemblyOptions {
    let mut opts = AssemblyOptions::default();
    opts.split_cross.seed = solver.seed;
    opts
}

fn run_estimate(
    config: &RunConfig,
    sink: &mut ArtifactSink,
) -> Result<Option<SolverDiagnostics>, PipelineError> {
    let solved = solve_posterior(config)?;
    let diagnostics = SolverDiagnostics::from(&solved.report);
    let options = SummaryOptions {
        prominence_fraction: config.solver.prominence_fraction,
        refine: config.solver.refine,
        sim: sim_options(config),
    };
    let result = summarize_density(
        &solved.posterior,
        &solved.domain,
        &config.parameters,
        &solved.trace,
        Some(diagnostics.clone()),
        &options,
    )
    .map_err(at("summary"))?;
    for p in &result.parameters {
        info!("estimate: {} = {} (marginal density {:.4e})", p.label, p.value, p.density);
    }

    for marginal in &result.marginals {
        let mut w = sink.create(&format!("marginal_{}.csv", sanitize_name(&marginal.label)))?;
        write_marginal_csv(&mut w, marginal).map_err(at("artifacts"))?;
        w.flush().map_err(at("artifacts"))?;
    }
    for pair in &config.joint_pairs {
        let joint = joint_pair(&solved, pair)?;
        let stem = format!("joint_{}_{}", sanitize_name(&pair[0]), sanitize_name(&pair[1]));
        let mut w = sink.create(&format!("{stem}.csv"))?;
        write_joint_csv(&mut w, &joint).map_err(at("artifacts"))?;
        w.flush().map_err(at("artifacts"))?;
        let mut w = sink.create(&format!("{stem}.dat"))?;
        gnuplot_table(&mut w, &joint).map_err(at("artifacts"))?;
        w.flush().map_err(at("artifacts"))?;
    }
    let fit = response_from_estimate(&result.estimate, &solved.trace, &sim_options(config))
        .map_err(at("summary"))?;
    write_response_artifact(sink, &solved.trace, &fit, "estimated parameters")?;

    let mut w = sink.create("estimation.json")?;
    write_result_json(&mut w, &result).map_err(at("artifacts"))?;
    w.flush().map_err(at("artifacts"))?;
    Ok(Some(diagnostics))
}

fn joint_pair(solved: &Solved, pair: &[String; 2]) -> Result<JointPdf, PipelineError> {
    let dim = |label: &str| {
        solved.domain.dim_of(label).ok_or_else(|| {
            PipelineError::new("summary", format!("`{label}` is not a grid axis"))
        })
    };
    joint_marginal_2d(&solved.posterior, &solved.domain, dim(&pair[0])?, dim(&pair[1])?)
        .map_err(at("summary"))
}

/// Writes a joint table as whitespace-separated `a b density` rows with a
/// blank line after each `a`-block — the grid layout gnuplot's `splot`
/// consumes directly.
fn gnuplot_table(out: &mut impl Write, joint: &JointPdf) -> std::io::Result<()> {
    writeln!(out, "# {} {} density", joint.label_a, joint.label_b)?;
    for (i, &a) in joint.coords_a.iter().enumerate() {
        for (j, &b) in joint.coords_b.iter().enumerate() {
            writeln!(out, "{a} {b} {}", joint.value(i, j))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn run_sensitivity(
    config: &RunConfig,
    sink: &mut ArtifactSink,
) -> Result<Option<SolverDiagnostics>, PipelineError> {
    let solved = solve_posterior(config)?;
    let diagnostics = SolverDiagnostics::from(&solved.report);

    let n_params = solved.domain.ndims() - solved.domain.n_state_dims();
    let sweep = if n_params <= MAX_SWEEP_DIMS {
        Some(parameter_sweep(config, &solved.trace, sink)?)
    } else {
        warn!(
            "{n_params} parameter axes exceed the {MAX_SWEEP_DIMS}-axis enumeration budget; \
             reporting density concentration only"
        );
        None
    };

    let indices = sensitivity_indices(&solved.posterior, &solved.domain, sweep.as_ref())
        .map_err(at("summary"))?;
    for idx in &indices {
        info!(
            "sensitivity: {} concentration = {:.4}, variance index = {}",
            idx.label,
            idx.concentration,
            idx.variance_index.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        );
    }
    let mut w = sink.create("sensitivity.csv")?;
    sensitivity_csv(&mut w, &indices).map_err(at("artifacts"))?;
    w.flush().map_err(at("artifacts"))?;
    Ok(Some(diagnostics))
}

fn sensitivity_csv(out: &mut impl Write, indices: &[SensitivityIndex]) -> std::io::Result<()> {
    writeln!(out, "parameter,concentration,variance_index")?;
    for idx in indices {
        match idx.variance_index {
            Some(v) => writeln!(out, "{},{},{v}", idx.label, idx.concentration)?,
            None => writeln!(out, "{},{},", idx.label, idx.concentration)?,
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle

/// Enumerates the posterior densely over the parameter axes of the grid.
fn parameter_sweep(
    config: &RunConfig,
    trace: &[BusMeasurement],
    sink: &mut ArtifactSink,
) -> Result<PosteriorTable, PipelineError> {
    let specs: Vec<GridSpec> =
        config.grid.iter().filter(|s| s.kind == AxisKind::Parameter).cloned().collect();
    let domain = build_grid(specs).map_err(at("grid"))?;
    let options = SweepOptions { tau: config.solver.temperature, sim: sim_options(config) };
    let table =
        brute_force_posterior(&domain, trace, &config.parameters, &options).map_err(at("sweep"))?;
    let (_, mode_coords) = table.mode().map_err(at("sweep"))?;
    info!(
        "sweep over {} nodes: tau = {:.4e}, mode at {:?}",
        table.len(),
        table.tau,
        table.labels.iter().zip(&mode_coords).collect::<Vec<_>>()
    );

    let mut w = sink.create("posterior.csv")?;
    posterior_csv(&mut w, &table).map_err(at("artifacts"))?;
    w.flush().map_err(at("artifacts"))?;
    Ok(table)
}

fn run_oracle(config: &RunConfig, sink: &mut ArtifactSink) -> Result<(), PipelineError> {
    let trace = read_trace(config)?;
    parameter_sweep(config, &trace, sink).map(|_| ())
}

/// One row per node: the node coordinates, its fit RMSE (`inf` when the
/// simulation failed there), and the posterior density.
fn posterior_csv(out: &mut impl Write, table: &PosteriorTable) -> std::io::Result<()> {
    writeln!(out, "{},rmse,density", table.labels.join(","))?;
    for lin in 0..table.len() {
        for (d, &k) in table.multi_index(lin).iter().enumerate() {
            write!(out, "{},", table.coordinates[d][k])?;
        }
        writeln!(out, "{},{}", table.rmse[lin], table.density[lin])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synthetic traces

/// Generates a synthetic measured trace from the config's `synth` recipe
/// and truth `parameters`, writing it as `synthetic.csv`.
///
/// The power columns are made self-consistent with the simulator by fixed-
/// point iteration, so re-simulating the written trace at the same
/// parameters reproduces them to well below 1e-6 RMSE (checked before the
/// file is kept). With `noise = 0` the file is a pure function of the
/// config; with noise it is a pure function of config and seed — equal
/// seeds give byte-identical files.
pub fn generate_synthetic(config: &RunConfig) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let spec = config.synth.as_ref().ok_or_else(|| {
        PipelineError::new("config", "synthetic generation needs a `synth` section")
    })?;
    let mut sink = ArtifactSink::new(&config.output_dir)?;
    match synth_trace(config, spec, &mut sink) {
        Ok(()) => Ok(RunReport {
            mode: "synth".to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
            diagnostics: None,
            artifacts: sink.into_artifacts(),
        }),
        Err(err) => {
            sink.discard();
            Err(err)
        }
    }
}

fn synth_trace(
    config: &RunConfig,
    spec: &SynthSpec,
    sink: &mut ArtifactSink,
) -> Result<(), PipelineError> {
    let sim = SimOptions { max_step: config.solver.max_step, ..SimOptions::default() };
    let seed_trace = profile_trace(spec);
    let mut trace =
        self_consistent_trace(&config.parameters, &seed_trace, &sim).map_err(at("synth"))?;

    let fit = response_from_estimate(&config.parameters, &trace, &sim).map_err(at("synth"))?;
    let round_trip = fit.rmse_combined();
    if spec.noise == 0.0 && round_trip > 1e-6 {
        return Err(PipelineError::new(
            "synth",
            format!("trace is not self-consistent: re-simulation RMSE {round_trip:.3e} > 1e-6"),
        ));
    }
    info!("synthetic trace: {} samples, re-simulation RMSE {round_trip:.3e}", trace.len());

    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.solver.seed);
        for m in &mut trace {
            let (g_p, g_q) = gaussian_pair(&mut rng);
            m.p += spec.noise * g_p;
            m.q += spec.noise * g_q;
        }
    }

    let comments = vec![
        format!(
            "synthetic {} profile: level {} on [{}, {}] of [0, {}], dt = {}",
            spec.profile.as_str(),
            spec.level,
            spec.t_start,
            spec.stop(),
            spec.t_end,
            spec.dt,
        ),
        format!(
            "baseline P0 = {}, Q0 = {}; noise sd = {}; seed = {}",
            spec.p0, spec.q0, spec.noise, config.solver.seed
        ),
    ];
    let path = sink.claim("synthetic.csv");
    write_trace_csv(&path, &trace, &comments).map_err(at("artifacts"))
}

/// Uniform samples of the voltage profile with the baseline powers filled
/// in as the starting guess for the self-consistency iteration.
fn profile_trace(spec: &SynthSpec) -> Vec<BusMeasurement> {
    let steps = (spec.t_end / spec.dt).round() as usize;
    (0..=steps)
        .map(|k| {
            let t = k as f64 * spec.dt;
            BusMeasurement { t, v: spec.voltage_at(t), theta: 0.0, p: spec.p0, q: spec.q0 }
        })
        .collect()
}

/// One Box–Muller draw: two independent standard normal samples.
fn gaussian_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}
