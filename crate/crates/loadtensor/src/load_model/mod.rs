//! Composite load model: a static ZIP load in parallel with a third-order
//! induction motor, both fed from the same measured bus voltage.
//!
//! The measured trace supplies voltage magnitude `V`, angle `theta`, and
//! bus powers `P`, `Q` per sample. The static branch responds to voltage
//! instantaneously through a quadratic polynomial in `V/V0`; the motor
//! carries three dynamic states (the d/q components of the voltage behind
//! transient reactance and the rotor slip). The mixture weight `omega` is
//! the static share of the total load.
//!
//! Sign and scaling conventions: the rotor-flux equations are written per
//! unit on the synchronous-frequency time base, so their right-hand sides
//! carry a factor `omega_sync` (377 rad/s at 60 Hz) when time is measured
//! in seconds. Setting `omega_sync = 1` recovers the bare per-unit-time
//! form. The swing equation uses the inertia constant `h` in seconds and
//! needs no scaling.

mod equilibrium;
mod sim;
mod trace;

pub use equilibrium::{find_equilibrium, BaselineOperatingPoint};
pub use sim::{rmse, self_consistent_trace, simulate_response, ResponseTrace, SimOptions};
pub use trace::{read_trace_csv, write_trace_csv};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Synchronous angular frequency for a 60 Hz system, rad/s.
pub const OMEGA_SYNC_60HZ: f64 = 2.0 * std::f64::consts::PI * 60.0;

fn default_omega_sync() -> f64 {
    OMEGA_SYNC_60HZ
}

/// Full parameter set of the composite load.
///
/// `omega` is the static (ZIP) share; `a_p`, `b_p`, `a_q`, `b_q` the ZIP
/// polynomial coefficients; the rest are induction-motor constants in per
/// unit except `h` (seconds). `omega_sync` is the system frequency time
/// base and is not an identified parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeLoadParams {
    pub omega: f64,
    pub a_p: f64,
    pub b_p: f64,
    pub a_q: f64,
    pub b_q: f64,
    pub r_s: f64,
    pub x_s: f64,
    pub r_r: f64,
    pub x_r: f64,
    pub x_m: f64,
    pub h: f64,
    #[serde(default = "default_omega_sync")]
    pub omega_sync: f64,
}

/// Labels of the parameters that may be placed on an estimation grid.
pub const ESTIMABLE_PARAMS: [&str; 11] =
    ["omega", "a_p", "b_p", "a_q", "b_q", "r_s", "x_s", "r_r", "x_r", "x_m", "h"];

/// Labels of the motor states, in grid order.
pub const STATE_LABELS: [&str; 3] = ["v_d_prime", "v_q_prime", "slip"];

impl CompositeLoadParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: [(&str, f64, bool); 12] = [
            ("omega", self.omega, (0.0..=1.0).contains(&self.omega)),
            ("a_p", self.a_p, self.a_p.is_finite()),
            ("b_p", self.b_p, self.b_p.is_finite()),
            ("a_q", self.a_q, self.a_q.is_finite()),
            ("b_q", self.b_q, self.b_q.is_finite()),
            ("r_s", self.r_s, self.r_s >= 0.0 && self.r_s.is_finite()),
            ("x_s", self.x_s, self.x_s > 0.0),
            ("r_r", self.r_r, self.r_r > 0.0),
            ("x_r", self.x_r, self.x_r > 0.0),
            ("x_m", self.x_m, self.x_m > 0.0),
            ("h", self.h, self.h > 0.0),
            ("omega_sync", self.omega_sync, self.omega_sync > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Reads the value of an estimable parameter by label.
    pub fn get(&self, label: &str) -> Option<f64> {
        Some(match label {
            "omega" => self.omega,
            "a_p" => self.a_p,
            "b_p" => self.b_p,
            "a_q" => self.a_q,
            "b_q" => self.b_q,
            "r_s" => self.r_s,
            "x_s" => self.x_s,
            "r_r" => self.r_r,
            "x_r" => self.x_r,
            "x_m" => self.x_m,
            "h" => self.h,
            _ => return None,
        })
    }

    /// Sets an estimable parameter by label; false if the label is unknown.
    pub fn set(&mut self, label: &str, value: f64) -> bool {
        let slot = match label {
            "omega" => &mut self.omega,
            "a_p" => &mut self.a_p,
            "b_p" => &mut self.b_p,
            "a_q" => &mut self.a_q,
            "b_q" => &mut self.b_q,
            "r_s" => &mut self.r_s,
            "x_s" => &mut self.x_s,
            "r_r" => &mut self.r_r,
            "x_r" => &mut self.x_r,
            "x_m" => &mut self.x_m,
            "h" => &mut self.h,
            _ => return false,
        };
        *slot = value;
        true
    }
}

/// Motor dynamic state: voltage behind transient reactance (d/q) and slip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    pub v_d_prime: f64,
    pub v_q_prime: f64,
    pub slip: f64,
}

impl MotorState {
    pub fn as_array(&self) -> [f64; 3] {
        [self.v_d_prime, self.v_q_prime, self.slip]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        MotorState { v_d_prime: x[0], v_q_prime: x[1], slip: x[2] }
    }
}

/// One sample of the measured bus trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusMeasurement {
    pub t: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub theta: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
}

/// Bus voltage expressed in the motor d/q frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqVoltage {
    /// Voltage magnitude the transform was evaluated at.
    pub v: f64,
    /// Angle between the terminal voltage and the internal q-axis.
    pub delta: f64,
    pub u_d: f64,
    pub u_q: f64,
}

/// Stator current in the d/q frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorCurrents {
    pub i_d: f64,
    pub i_q: f64,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter `{name}` out of range: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("voltage magnitude {0} too small for the d/q transform")]
    VanishingVoltage(f64),
    #[error("d/q transform denominator vanished (V={v}, P={p}, Q={q})")]
    SingularTransform { v: f64, p: f64, q: f64 },
    #[error("no equilibrium slip in (0, {smax}) delivers motor power {target} at V={v}")]
    InfeasibleOperatingPoint { target: f64, v: f64, smax: f64 },
    #[error("equilibrium residual {residual:e} exceeds tolerance {tol:e}")]
    EquilibriumResidual { residual: f64, tol: f64 },
    #[error("state `{variable}` diverged to {value} at t={t}")]
    Divergence { variable: &'static str, value: f64, t: f64 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace row {row}: {reason}")]
    TraceFormat { row: usize, reason: String },
    #[error("trace I/O: {0}")]
    TraceIo(#[from] std::io::Error),
    #[error("trace CSV: {0}")]
    TraceCsv(#[from] csv::Error),
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Static ZIP branch active/reactive power at voltage ratio `v_ratio = V/V0`.
///
/// The polynomial is normalized so that `v_ratio = 1` returns the baselines
/// exactly, whatever the coefficients.
pub fn zip_power(
    params: &CompositeLoadParams,
    p_zip0: f64,
    q_zip0: f64,
    v_ratio: f64,
) -> (f64, f64) {
    let p = p_zip0
        * (params.a_p * v_ratio * v_ratio + params.b_p * v_ratio + 1.0 - params.a_p - params.b_p);
    let q = q_zip0
        * (params.a_q * v_ratio * v_ratio + params.b_q * v_ratio + 1.0 - params.a_q - params.b_q);
    (p, q)
}

/// Rotor-frame angle and d/q voltage components from one measured sample.
///
/// The current phasor is reconstructed from the measured apparent power, so
/// only `V`, `P`, `Q` and the stator impedance enter; the measured voltage
/// angle cancels out of the power-factor angle.
pub fn dq_transform(
    v: f64,
    p: f64,
    q: f64,
    r_s: f64,
    x_s: f64,
) -> Result<DqVoltage, ModelError> {
    if v <= 1e-9 {
        return Err(ModelError::VanishingVoltage(v));
    }
    let s_mag = (p * p + q * q).sqrt();
    let i_mag = s_mag / v;
    // Power-factor angle: angle between voltage and current phasors.
    let phi = q.atan2(p);
    let (sin_phi, cos_phi) = phi.sin_cos();
    let num = x_s * i_mag * cos_phi - r_s * i_mag * sin_phi;
    let den = v - (r_s * i_mag * cos_phi + x_s * i_mag * sin_phi);
    if den.abs() < 1e-12 * v.max(1.0) {
        return Err(ModelError::SingularTransform { v, p, q });
    }
    let delta = (num / den).atan();
    Ok(DqVoltage { v, delta, u_d: -v * delta.sin(), u_q: v * delta.cos() })
}

/// Transient reactance `X' = X_s + X_m X_r / (X_m + X_r)`.
pub fn transient_reactance(params: &CompositeLoadParams) -> f64 {
    params.x_s + params.x_m * params.x_r / (params.x_m + params.x_r)
}

/// Stator currents behind the transient reactance.
pub fn im_currents(
    state: &MotorState,
    dq: &DqVoltage,
    r_s: f64,
    x_prime: f64,
) -> MotorCurrents {
    let d = r_s * r_s + x_prime * x_prime;
    let ed = dq.u_d - state.v_d_prime;
    let eq = dq.u_q - state.v_q_prime;
    MotorCurrents {
        i_d: (r_s * ed + x_prime * eq) / d,
        i_q: (r_s * eq - x_prime * ed) / d,
    }
}

/// Right-hand side of the motor state equations, in per-second time.
///
/// Returns `[dv'_d/dt, dv'_q/dt, ds/dt]`. The flux equations are scaled by
/// `omega_sync`; the swing equation is already in seconds through `h`.
pub fn im_derivatives(
    params: &CompositeLoadParams,
    state: &MotorState,
    currents: &MotorCurrents,
    t_m0: f64,
) -> [f64; 3] {
    let a = params.r_r / (params.x_r + params.x_m);
    let c = params.x_m * params.x_m / (params.x_r + params.x_m);
    #[cfg(not(feature = "alt-slip-sign"))]
    let rot = 1.0;
    #[cfg(feature = "alt-slip-sign")]
    let rot = -1.0;
    let s = state.slip;
    let dvd = params.omega_sync
        * (-a * (state.v_d_prime + c * currents.i_q) + rot * s * state.v_q_prime);
    let dvq = params.omega_sync
        * (-a * (state.v_q_prime - c * currents.i_d) - rot * s * state.v_d_prime);
    let one_minus_s = 1.0 - s;
    let torque_e = state.v_d_prime * currents.i_d + state.v_q_prime * currents.i_q;
    let dsl = (t_m0 * one_minus_s * one_minus_s - torque_e) / (2.0 * params.h);
    [dvd, dvq, dsl]
}

/// Motor active/reactive power drawn from the bus.
pub fn im_power(dq: &DqVoltage, currents: &MotorCurrents) -> (f64, f64) {
    (
        dq.u_d * currents.i_d + dq.u_q * currents.i_q,
        dq.u_d * currents.i_q - dq.u_q * currents.i_d,
    )
}

/// Mixture of the two branches: `omega` weights the static share.
pub fn composite_power(omega: f64, zip: (f64, f64), im: (f64, f64)) -> (f64, f64) {
    (omega * zip.0 + (1.0 - omega) * im.0, omega * zip.1 + (1.0 - omega) * im.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn bench_params() -> CompositeLoadParams {
        CompositeLoadParams {
            omega: 0.5,
            a_p: 0.001,
            b_p: 0.5642,
            a_q: 0.001,
            b_q: 0.6626,
            r_s: 0.049,
            x_s: 0.096,
            r_r: 0.044,
            x_r: 0.244,
            x_m: 2.96,
            h: 0.93,
            omega_sync: OMEGA_SYNC_60HZ,
        }
    }

    #[test]
    fn zip_polynomial_at_reference_points() {
        let p = bench_params();
        let (pz, _) = zip_power(&p, 1.0, 1.0, 0.95);
        assert_relative_eq!(pz, 0.9716925, max_relative = 1e-12);
        let (_, qz) = zip_power(&p, 1.0, 1.0, 1.05);
        assert_relative_eq!(qz, 1.0332325, max_relative = 1e-12);
    }

    #[test]
    fn zip_is_exact_at_nominal_voltage() {
        let mut p = bench_params();
        p.a_p = 0.3;
        p.b_p = -1.7;
        p.a_q = 2.0;
        p.b_q = 0.11;
        let (pz, qz) = zip_power(&p, 0.73, -0.21, 1.0);
        assert_relative_eq!(pz, 0.73, max_relative = 1e-15);
        assert_relative_eq!(qz, -0.21, max_relative = 1e-15);
    }

    #[test]
    fn transient_reactance_of_bench_motor() {
        let x = transient_reactance(&bench_params());
        assert_relative_eq!(x, 0.096 + 2.96 * 0.244 / (2.96 + 0.244), max_relative = 1e-15);
        assert!((x - 0.32142).abs() < 5e-6);
    }

    #[test]
    fn dq_voltage_magnitude_is_preserved() {
        let dq = dq_transform(0.97, 0.9, 0.35, 0.049, 0.096).unwrap();
        assert_relative_eq!(dq.u_d * dq.u_d + dq.u_q * dq.u_q, 0.97 * 0.97, max_relative = 1e-14);
    }

    #[test]
    fn dq_transform_with_zero_current_is_aligned() {
        let dq = dq_transform(1.0, 0.0, 0.0, 0.049, 0.096).unwrap();
        assert_eq!(dq.delta, 0.0);
        assert_eq!(dq.u_d, 0.0);
        assert_eq!(dq.u_q, 1.0);
    }

    #[test]
    fn dq_transform_rejects_dead_bus() {
        assert!(matches!(
            dq_transform(0.0, 1.0, 0.1, 0.049, 0.096),
            Err(ModelError::VanishingVoltage(_))
        ));
    }

    #[test]
    fn parameter_validation_catches_bad_ranges() {
        let mut p = bench_params();
        p.omega = 1.5;
        assert!(matches!(p.validate(), Err(ModelError::InvalidParameter { name: "omega", .. })));
        let mut p = bench_params();
        p.h = 0.0;
        assert!(matches!(p.validate(), Err(ModelError::InvalidParameter { name: "h", .. })));
        assert!(bench_params().validate().is_ok());
    }

    #[test]
    fn param_get_set_round_trip() {
        let mut p = bench_params();
        for label in ESTIMABLE_PARAMS {
            let v = p.get(label).unwrap();
            assert!(p.set(label, v + 0.5));
            assert_relative_eq!(p.get(label).unwrap(), v + 0.5);
            assert!(p.set(label, v));
        }
        assert!(p.get("nonsense").is_none());
        assert!(!p.set("nonsense", 1.0));
        assert_eq!(p, bench_params());
    }
}
