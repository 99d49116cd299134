//! Fixed-step RK4 playback of the motor states against a measured trace.
//!
//! The measured voltage (and the measured powers, which only enter through
//! the d/q frame angle) are interpolated linearly at the stage times, and
//! the algebraic current/voltage relations are re-evaluated at every stage.

use super::*;

/// Integrator options.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Upper bound on the RK4 step, seconds. Sample intervals are subdivided
    /// into equal substeps no longer than this.
    pub max_step: f64,
    /// Start from this state instead of the solved equilibrium.
    pub initial_state: Option<MotorState>,
    /// Mechanical torque coefficient override; default comes from the
    /// baseline initialization.
    pub t_m0: Option<f64>,
    /// Feasibility box for (v'_d, v'_q, slip); integration aborts when a
    /// state leaves it by more than half the box width.
    pub state_box: [(f64, f64); 3],
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            max_step: 1e-3,
            initial_state: None,
            t_m0: None,
            state_box: [(-2.0, 2.0), (-2.0, 2.0), (-1.0, 1.0)],
        }
    }
}

/// Predicted bus power trace plus the state trajectory behind it.
#[derive(Debug, Clone)]
pub struct ResponseTrace {
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub states: Vec<MotorState>,
    pub baseline: BaselineOperatingPoint,
}

impl ResponseTrace {
    /// RMS misfit of the predicted active power against the measurement.
    pub fn rmse_p(&self, trace: &[BusMeasurement]) -> Result<f64, ModelError> {
        let meas: Vec<f64> = trace.iter().map(|m| m.p).collect();
        rmse(&self.p, &meas)
    }

    /// RMS misfit of the predicted reactive power against the measurement.
    pub fn rmse_q(&self, trace: &[BusMeasurement]) -> Result<f64, ModelError> {
        let meas: Vec<f64> = trace.iter().map(|m| m.q).collect();
        rmse(&self.q, &meas)
    }

    /// Combined P/Q misfit used as the scalar fit score.
    pub fn rmse_combined(&self, trace: &[BusMeasurement]) -> Result<f64, ModelError> {
        let p = self.rmse_p(trace)?;
        let q = self.rmse_q(trace)?;
        Ok(((p * p + q * q) / 2.0).sqrt())
    }
}

/// Root-mean-square difference of two equal-length series.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, ModelError> {
    if a.len() != b.len() {
        return Err(ModelError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(ModelError::EmptyTrace);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Linear interpolation of (V, P, Q) within one sample interval.
fn lerp_sample(a: &BusMeasurement, b: &BusMeasurement, tau: f64) -> (f64, f64, f64) {
    (
        a.v + (b.v - a.v) * tau,
        a.p + (b.p - a.p) * tau,
        a.q + (b.q - a.q) * tau,
    )
}

struct Stepper<'a> {
    params: &'a CompositeLoadParams,
    x_prime: f64,
    t_m0: f64,
}

impl Stepper<'_> {
    fn rhs(&self, state: &MotorState, v: f64, p: f64, q: f64) -> Result<[f64; 3], ModelError> {
        let dq = dq_transform(v, p, q, self.params.r_s, self.params.x_s)?;
        let currents = im_currents(state, &dq, self.params.r_s, self.x_prime);
        Ok(im_derivatives(self.params, state, &currents, self.t_m0))
    }

    /// One classical RK4 step across `[a, b]` scaled to substep `[tau0, tau0+dtau]`.
    fn rk4(
        &self,
        state: [f64; 3],
        a: &BusMeasurement,
        b: &BusMeasurement,
        tau0: f64,
        dtau: f64,
        h: f64,
    ) -> Result<[f64; 3], ModelError> {
        let eval = |x: [f64; 3], tau: f64| -> Result<[f64; 3], ModelError> {
            let (v, p, q) = lerp_sample(a, b, tau);
            self.rhs(&MotorState::from_array(x), v, p, q)
        };
        let k1 = eval(state, tau0)?;
        let x2 = add_scaled(state, k1, 0.5 * h);
        let k2 = eval(x2, tau0 + 0.5 * dtau)?;
        let x3 = add_scaled(state, k2, 0.5 * h);
        let k3 = eval(x3, tau0 + 0.5 * dtau)?;
        let x4 = add_scaled(state, k3, h);
        let k4 = eval(x4, tau0 + dtau)?;
        let mut out = state;
        for i in 0..3 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(out)
    }
}

fn add_scaled(x: [f64; 3], k: [f64; 3], h: f64) -> [f64; 3] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2]]
}

fn check_box(state: &[f64; 3], boxes: &[(f64, f64); 3], t: f64) -> Result<(), ModelError> {
    for (i, &(lo, hi)) in boxes.iter().enumerate() {
        let margin = 0.5 * (hi - lo);
        if !(state[i].is_finite()) || state[i] < lo - margin || state[i] > hi + margin {
            return Err(ModelError::Divergence {
                variable: STATE_LABELS[i],
                value: state[i],
                t,
            });
        }
    }
    Ok(())
}

/// Integrates the motor states along a measured trace and returns the
/// predicted composite P/Q at every sample time.
pub fn simulate_response(
    params: &CompositeLoadParams,
    trace: &[BusMeasurement],
    options: &SimOptions,
) -> Result<ResponseTrace, ModelError> {
    params.validate()?;
    if trace.is_empty() {
        return Err(ModelError::EmptyTrace);
    }
    let first = trace[0];
    let baseline = find_equilibrium(params, first.v, first.p, first.q)?;
    let t_m0 = options.t_m0.unwrap_or(baseline.t_m0);
    let mut state = options.initial_state.unwrap_or(baseline.state).as_array();
    let x_prime = transient_reactance(params);
    let stepper = Stepper { params, x_prime, t_m0 };

    let mut out = ResponseTrace {
        t: Vec::with_capacity(trace.len()),
        p: Vec::with_capacity(trace.len()),
        q: Vec::with_capacity(trace.len()),
        states: Vec::with_capacity(trace.len()),
        baseline,
    };

    let emit = |out: &mut ResponseTrace, state: &[f64; 3], m: &BusMeasurement| -> Result<(), ModelError> {
        let ms = MotorState::from_array(*state);
        let dq = dq_transform(m.v, m.p, m.q, params.r_s, params.x_s)?;
        let currents = im_currents(&ms, &dq, params.r_s, x_prime);
        let im = im_power(&dq, &currents);
        let zip = zip_power(params, baseline.p_zip0, baseline.q_zip0, m.v / baseline.v0);
        let (p_hat, q_hat) = composite_power(params.omega, zip, im);
        out.t.push(m.t);
        out.p.push(p_hat);
        out.q.push(q_hat);
        out.states.push(ms);
        Ok(())
    };

    check_box(&state, &options.state_box, first.t)?;
    emit(&mut out, &state, &trace[0])?;
    for w in trace.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            return Err(ModelError::TraceFormat {
                row: out.t.len(),
                reason: format!("time not strictly increasing ({} to {})", a.t, b.t),
            });
        }
        let n_sub = (dt / options.max_step).ceil().max(1.0) as usize;
        let h = dt / n_sub as f64;
        let dtau = 1.0 / n_sub as f64;
        for j in 0..n_sub {
            state = stepper.rk4(state, a, b, j as f64 * dtau, dtau, h)?;
            check_box(&state, &options.state_box, a.t + (j + 1) as f64 * h)?;
        }
        emit(&mut out, &state, b)?;
    }
    Ok(out)
}

/// Turns a voltage profile into a self-consistent synthetic measurement.
///
/// The P/Q columns of `seed` are only an initial guess (typically the
/// baseline constants); they feed back into the simulation through the d/q
/// frame angle, so the model response is substituted back and re-simulated
/// until the trace reproduces itself. Convergence is geometric because the
/// angle coupling is weak; a handful of passes reaches round-off. Times,
/// voltages and angles are kept exactly as given, and the first sample
/// keeps anchoring the baseline operating point.
pub fn self_consistent_trace(
    params: &CompositeLoadParams,
    seed: &[BusMeasurement],
    options: &SimOptions,
) -> Result<Vec<BusMeasurement>, ModelError> {
    let mut trace = seed.to_vec();
    for _ in 0..30 {
        let resp = simulate_response(params, &trace, options)?;
        let mut delta = 0.0f64;
        let mut scale = 0.0f64;
        for (m, (&p, &q)) in trace.iter_mut().zip(resp.p.iter().zip(&resp.q)) {
            delta = delta.max((m.p - p).abs()).max((m.q - q).abs());
            scale = scale.max(p.abs()).max(q.abs());
            m.p = p;
            m.q = q;
        }
        if delta <= 1e-13 * scale.max(1.0) {
            break;
        }
    }
    Ok(trace)
}
