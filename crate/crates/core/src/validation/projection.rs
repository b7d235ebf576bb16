//! Best isotropic Gaussian `N(mu, sigma² I)` for the start step, found by
//! minimizing the expected KL to the true kernel numerically.

use super::kl::{start_summary, StartKind};
use super::GaussianSummary;
use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::{ConditionalModel, GaussianConditionalModel, State};
use crate::schedule::{BridgeCoeffs, BridgeSchedule};

const MAX_SWEEPS: usize = 200;
const STEP_TOL: f64 = 1e-14;

/// Three-point Gauss–Hermite rule for `E[h(Z)]`, `Z ~ N(0, 1)`; exact for
/// polynomials up to degree five.
const GH_NODES: [f64; 3] = [-1.732_050_807_568_877_2, 0.0, 1.732_050_807_568_877_2];
const GH_WEIGHTS: [f64; 3] = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];

/// `E_{X0_i}[h(a y_i + b X0_i)]` for one coordinate by quadrature.
fn expect_coordinate(
    k: &BridgeCoeffs,
    y: f64,
    mean0: f64,
    var0: f64,
    h: impl Fn(f64) -> f64,
) -> f64 {
    GH_NODES
        .iter()
        .zip(GH_WEIGHTS)
        .map(|(z, w)| w * h(k.a * y + k.b * (mean0 + var0.sqrt() * z)))
        .sum()
}

/// Expected KL `E_{X0} KL(N(mean, variance I) || N(a y + b X0, c² I))` with
/// the expectation over `X0` done by Gauss–Hermite quadrature.
pub fn projection_objective(
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    tau: f64,
    mean: &State,
    variance: f64,
) -> Result<f64> {
    check_dim(model.dim(), mean.len())?;
    let k = interior_coeffs(schedule, tau)?;
    let mu0 = model.prior_mean(y);
    let var0 = model.variances();
    let ratio = variance / k.c2;
    let d = model.dim() as f64;
    let spread: f64 = (0..model.dim())
        .map(|i| expect_coordinate(&k, y[i], mu0[i], var0[i], |m| (m - mean[i]).powi(2)))
        .sum();
    Ok(0.5 * d * (ratio - 1.0 - ratio.ln()) + spread / (2.0 * k.c2))
}

fn interior_coeffs(schedule: &BridgeSchedule, tau: f64) -> Result<BridgeCoeffs> {
    let k = schedule.coeffs(tau)?;
    if k.c2 > 0.0 {
        Ok(k)
    } else {
        Err(BridgeError::Domain(format!("tau = {tau} must lie strictly inside (0, T)")))
    }
}

/// Minimizes [`projection_objective`] over `(mu, ln sigma²)` by cyclic
/// coordinate Newton steps, starting from the Euler–Maruyama start law.
/// Derivatives of the expectation term are taken under the quadrature.
pub fn optimal_gaussian_projection(
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    tau: f64,
) -> Result<GaussianSummary> {
    let k = interior_coeffs(schedule, tau)?;
    let init = start_summary(model, schedule, y, tau, StartKind::Em)?;
    let mu0 = model.prior_mean(y);
    let var0 = model.variances();
    let d = model.dim();

    let mut mean = init.mean;
    let mut log_var = init.variance[0].ln();
    for _ in 0..MAX_SWEEPS {
        let mut largest = 0.0f64;
        for i in 0..d {
            // dJ/dmu_i = -E[m - mu_i] / c², d²J/dmu_i² = 1 / c²
            let grad = -expect_coordinate(&k, y[i], mu0[i], var0[i], |m| m - mean[i]) / k.c2;
            let step = grad * k.c2;
            mean[i] -= step;
            largest = largest.max(step.abs() / (1.0 + mean[i].abs()));
        }
        let ratio = log_var.exp() / k.c2;
        let grad = 0.5 * d as f64 * (ratio - 1.0);
        let hess = 0.5 * d as f64 * ratio;
        let step = grad / hess;
        log_var -= step;
        largest = largest.max(step.abs());
        if largest < STEP_TOL {
            return GaussianSummary::isotropic(mean, log_var.exp());
        }
    }
    let ratio = log_var.exp() / k.c2;
    Err(BridgeError::NonConvergence {
        iterations: MAX_SWEEPS,
        residual: (ratio - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::em_start_params;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> State {
        State::from_column_slice(x)
    }

    #[test]
    fn brownian_example() {
        let s = BridgeSchedule::brownian_bridge(1.0, 1.0).unwrap();
        let m = GaussianConditionalModel::isotropic(v(&[0.0]), 1.0).unwrap();
        let q = optimal_gaussian_projection(&m, &s, &v(&[2.0]), 0.9).unwrap();
        assert!((q.mean[0] - 1.8).abs() < 1e-8);
        assert!((q.variance[0].sqrt() - 0.3).abs() < 1e-8);
    }

    #[test]
    fn sigma_star_independent_of_y() {
        let s = BridgeSchedule::variance_preserving(0.1, 3.0, 1.0).unwrap();
        let m = GaussianConditionalModel::isotropic(v(&[0.2, 0.4]), 0.5).unwrap();
        let c = s.coeffs(0.6).unwrap().c;
        for y in [v(&[0.0, 0.0]), v(&[5.0, -3.0]), v(&[-1.0, 8.0])] {
            let q = optimal_gaussian_projection(&m, &s, &y, 0.6).unwrap();
            assert_relative_eq!(q.variance[0].sqrt(), c, max_relative = 1e-10);
        }
    }

    #[test]
    fn optimum_beats_em_parameters() {
        let s = BridgeSchedule::variance_preserving(0.1, 3.0, 1.0).unwrap();
        let m = GaussianConditionalModel::isotropic(v(&[0.2, 0.4]), 0.5).unwrap();
        let y = v(&[1.0, -1.0]);
        let q = optimal_gaussian_projection(&m, &s, &y, 0.8).unwrap();
        let best = projection_objective(&m, &s, &y, 0.8, &q.mean, q.variance[0]).unwrap();
        let (em_mean, em_std) = em_start_params(&m.prior_mean(&y), &y, 0.8, &s).unwrap();
        let em = projection_objective(&m, &s, &y, 0.8, &em_mean, em_std * em_std).unwrap();
        assert!(best < em);
    }
}
