//! Reference pushforward of a Gaussian through the probability-flow ODE.
//!
//! For Gaussian data the exact PF-ODE drift is affine in `x`, coordinate by
//! coordinate: `x' = A(t) x + B(t)`. A Gaussian start therefore stays
//! Gaussian, with `m' = A m + B` and `v' = 2 A v`.

use super::GaussianSummary;
use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::{ConditionalModel, GaussianConditionalModel, State};
use crate::schedule::BridgeSchedule;

pub const FLOW_ORACLE_MIN_STEPS: usize = 10_000;

/// `(A(t), B(t))` of the exact probability-flow drift for Gaussian data.
///
/// With `m_t = a y + b mu0`, `V_t = c² + b² var0` and
/// `q_t = alpha_t² (rho_T² - rho_t²)`:
///
/// ```text
/// A = f + g² / (2V) - g² / q
/// B = -g² m / (2V) + g² (alpha_t / alpha_T) y / q
/// ```
pub fn pf_ode_affine_coeffs(
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    t: f64,
) -> Result<(State, State)> {
    check_dim(model.dim(), y.len())?;
    if !(t >= 0.0 && t < schedule.horizon()) {
        return Err(BridgeError::Domain(format!("flow coefficients need 0 <= t < T, got {t}")));
    }
    let (m, var) = model.marginal_moments(y, t, schedule)?;
    let alpha = schedule.alpha(t)?;
    let q = alpha * alpha * schedule.rho2_gap_unchecked(t);
    let r = alpha / schedule.alpha_end();
    let f = schedule.f(t);
    let g2 = schedule.g2(t);
    let a = var.map(|v| f + g2 / (2.0 * v) - g2 / q);
    let b = State::from_iterator(
        y.len(),
        (0..y.len()).map(|i| -g2 * m[i] / (2.0 * var[i]) + g2 * r * y[i] / q),
    );
    Ok((a, b))
}

/// Pushes `start` (the law of `X_tau`) through the probability-flow ODE to
/// `t = 0`. Uses `steps` uniform substeps: classical RK4 on all but the
/// last, which is a single Euler step into `t = 0`.
pub fn gaussian_flow_oracle(
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    start: &GaussianSummary,
    tau: f64,
    steps: usize,
) -> Result<GaussianSummary> {
    check_dim(model.dim(), start.dim())?;
    if steps < FLOW_ORACLE_MIN_STEPS {
        return Err(BridgeError::Config(format!(
            "flow oracle needs at least {FLOW_ORACLE_MIN_STEPS} steps, got {steps}"
        )));
    }
    if !(tau > 0.0 && tau < schedule.horizon()) {
        return Err(BridgeError::Domain(format!("tau = {tau} must lie strictly inside (0, T)")));
    }
    let d = model.dim();
    // state layout: [mean (d), variance (d)]
    let rhs = |t: f64, z: &[f64]| -> Result<Vec<f64>> {
        let (a, b) = pf_ode_affine_coeffs(model, schedule, y, t)?;
        let mut out = vec![0.0; 2 * d];
        for i in 0..d {
            out[i] = a[i] * z[i] + b[i];
            out[d + i] = 2.0 * a[i] * z[d + i];
        }
        Ok(out)
    };
    let axpy = |z: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        z.iter().zip(k).map(|(z, k)| z + s * k).collect()
    };

    let h = -tau / steps as f64;
    let mut z: Vec<f64> = start.mean.iter().chain(start.variance.iter()).copied().collect();
    for n in 0..steps {
        let t = tau + n as f64 * h;
        if n + 1 == steps {
            let k1 = rhs(t, &z)?;
            z = axpy(&z, &k1, h);
            break;
        }
        let k1 = rhs(t, &z)?;
        let k2 = rhs(t + 0.5 * h, &axpy(&z, &k1, 0.5 * h))?;
        let k3 = rhs(t + 0.5 * h, &axpy(&z, &k2, 0.5 * h))?;
        let k4 = rhs(t + h, &axpy(&z, &k3, h))?;
        for i in 0..2 * d {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    GaussianSummary::new(
        State::from_column_slice(&z[..d]),
        State::from_iterator(d, z[d..].iter().map(|v| v.max(0.0))),
    )
}
