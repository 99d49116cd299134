//! Steady-state initialization from the first measured operating point.
//!
//! The closure convention: the ZIP baseline takes the full measured active
//! power (`p_zip0 = P0`), the motor is loaded to the same `P0` so the
//! omega-weighted mixture reproduces `P0` for every mixture weight, and the
//! reactive baseline absorbs whatever reactive power the motor equilibrium
//! does not account for. The mechanical torque coefficient is then chosen
//! so the solved slip is an exact fixed point.

use super::*;

/// Anchors the model to the pre-disturbance measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOperatingPoint {
    pub v0: f64,
    pub p0: f64,
    pub q0: f64,
    pub p_zip0: f64,
    pub q_zip0: f64,
    /// Mechanical torque coefficient; torque is `t_m0 * (1 - s)^2`.
    pub t_m0: f64,
    pub state: MotorState,
    /// Motor share of P/Q at the baseline.
    pub p_im0: f64,
    pub q_im0: f64,
}

/// Steady rotor flux for a prescribed slip: solves the two linear flux
/// equations with the currents substituted in.
fn steady_flux_at_slip(
    params: &CompositeLoadParams,
    dq: &DqVoltage,
    x_prime: f64,
    slip: f64,
) -> (MotorState, MotorCurrents) {
    let a = params.r_r / (params.x_r + params.x_m);
    let c = params.x_m * params.x_m / (params.x_r + params.x_m);
    #[cfg(not(feature = "alt-slip-sign"))]
    let rot = 1.0;
    #[cfg(feature = "alt-slip-sign")]
    let rot = -1.0;
    let d = params.r_s * params.r_s + x_prime * x_prime;
    // i_d = id0 - (r_s v'_d + x' v'_q)/d, i_q = iq0 + (x' v'_d - r_s v'_q)/d
    let id0 = (params.r_s * dq.u_d + x_prime * dq.u_q) / d;
    let iq0 = (params.r_s * dq.u_q - x_prime * dq.u_d) / d;
    // Flux equations at equilibrium, collected in v' = (v'_d, v'_q):
    //   (-a - a c x'/d) v'_d + (a c r_s/d + rot s) v'_q = a c iq0
    //   (-a c r_s/d - rot s) v'_d + (-a - a c x'/d) v'_q = -a c id0
    let m11 = -a - a * c * x_prime / d;
    let m12 = a * c * params.r_s / d + rot * slip;
    let m21 = -a * c * params.r_s / d - rot * slip;
    let m22 = m11;
    let b1 = a * c * iq0;
    let b2 = -a * c * id0;
    let det = m11 * m22 - m12 * m21;
    let v_d_prime = (b1 * m22 - m12 * b2) / det;
    let v_q_prime = (m11 * b2 - b1 * m21) / det;
    let state = MotorState { v_d_prime, v_q_prime, slip };
    let currents = im_currents(&state, dq, params.r_s, x_prime);
    (state, currents)
}

/// Motor active power at the steady state belonging to `slip`.
fn steady_power_at_slip(
    params: &CompositeLoadParams,
    dq: &DqVoltage,
    x_prime: f64,
    slip: f64,
) -> f64 {
    let (_, currents) = steady_flux_at_slip(params, dq, x_prime, slip);
    im_power(dq, &currents).0
}

const SLIP_MAX: f64 = 0.9999;
const RESIDUAL_TOL: f64 = 1e-9;

/// Finds the stable steady state matching the first measured sample.
///
/// The slip is located on the stable (low-slip) branch of the steady
/// power/slip curve by bracketing the smallest root of
/// `P_im(s) = P0` and bisecting it to machine precision.
pub fn find_equilibrium(
    params: &CompositeLoadParams,
    v0: f64,
    p0: f64,
    q0: f64,
) -> Result<BaselineOperatingPoint, ModelError> {
    params.validate()?;
    let dq = dq_transform(v0, p0, q0, params.r_s, params.x_s)?;
    let x_prime = transient_reactance(params);

    // Bracket the smallest slip whose steady power meets the target.
    let target = p0;
    let f = |s: f64| steady_power_at_slip(params, &dq, x_prime, s) - target;
    let scan = 2000;
    let mut lo = 0.0;
    let mut f_lo = f(lo);
    let mut bracket = None;
    for k in 1..=scan {
        let hi = SLIP_MAX * k as f64 / scan as f64;
        let f_hi = f(hi);
        if f_lo == 0.0 {
            bracket = Some((lo, lo));
            break;
        }
        if f_lo < 0.0 && f_hi >= 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        f_lo = f_hi;
    }
    let (mut lo, mut hi) = bracket.ok_or(ModelError::InfeasibleOperatingPoint {
        target,
        v: v0,
        smax: SLIP_MAX,
    })?;
    // Bisection: the bracket is exact and the function is smooth, so 100
    // halvings reach f64 resolution.
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let slip = 0.5 * (lo + hi);

    let (state, currents) = steady_flux_at_slip(params, &dq, x_prime, slip);
    let (p_im0, q_im0) = im_power(&dq, &currents);
    let torque_e = state.v_d_prime * currents.i_d + state.v_q_prime * currents.i_q;
    let one_minus_s = 1.0 - slip;
    let t_m0 = torque_e / (one_minus_s * one_minus_s);

    // The reactive baseline absorbs the motor/measurement mismatch so the
    // mixture matches Q0 exactly; with no static share it has no effect and
    // defaults to the measurement itself.
    let p_zip0 = p0;
    let q_zip0 = if params.omega > 1e-9 {
        (q0 - (1.0 - params.omega) * q_im0) / params.omega
    } else {
        q0
    };

    let derivs = im_derivatives(params, &state, &currents, t_m0);
    let residual = derivs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return Err(ModelError::EquilibriumResidual { residual, tol: RESIDUAL_TOL });
    }

    Ok(BaselineOperatingPoint {
        v0,
        p0,
        q0,
        p_zip0,
        q_zip0,
        t_m0,
        state,
        p_im0,
        q_im0,
    })
}
