use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::GaussianSummary;
use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::{ConditionalModel, GaussianConditionalModel, State};
use crate::samplers::{em_start_params, posterior_start_params};
use crate::schedule::BridgeSchedule;

/// Which first-step law is being scored against the true kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Post,
    Em,
}

/// `KL(p || q)` for diagonal Gaussians.
pub fn kl_gaussian(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    if q.variance.iter().any(|v| !(*v > 0.0)) {
        return Err(BridgeError::Domain(
            "KL reference distribution needs strictly positive variances".into(),
        ));
    }
    Ok((0..p.dim())
        .map(|i| {
            let ratio = p.variance[i] / q.variance[i];
            let diff = p.mean[i] - q.mean[i];
            0.5 * (ratio - 1.0 - ratio.ln()) + diff * diff / (2.0 * q.variance[i])
        })
        .sum())
}

fn check_tau(schedule: &BridgeSchedule, tau: f64) -> Result<()> {
    if tau > 0.0 && tau < schedule.horizon() {
        Ok(())
    } else {
        Err(BridgeError::Domain(format!(
            "tau = {tau} must lie strictly inside (0, {})",
            schedule.horizon()
        )))
    }
}

/// Law of `X_tau` under the chosen start, with `X̂0` taken as the prior mean.
pub fn start_summary(
    model: &dyn ConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    tau: f64,
    kind: StartKind,
) -> Result<GaussianSummary> {
    check_tau(schedule, tau)?;
    let prior = model.prior_mean(y);
    let (mean, std) = match kind {
        StartKind::Post => posterior_start_params(&prior, y, tau, schedule)?,
        StartKind::Em => em_start_params(&prior, y, tau, schedule)?,
    };
    GaussianSummary::isotropic(mean, std * std)
}

/// `E_{X0 ~ q_data(.|y)} KL(q_start || N(a y + b X0, c² I))` in closed form.
pub fn expected_kl_start(
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    tau: f64,
    kind: StartKind,
) -> Result<f64> {
    let start = start_summary(model, schedule, y, tau, kind)?;
    let k = schedule.coeffs(tau)?;
    let mu0 = model.prior_mean(y);
    let var0 = model.variances();
    Ok((0..model.dim())
        .map(|i| {
            let ratio = start.variance[i] / k.c2;
            let bias = start.mean[i] - k.a * y[i] - k.b * mu0[i];
            0.5 * (ratio - 1.0 - ratio.ln())
                + (bias * bias + k.b * k.b * var0[i]) / (2.0 * k.c2)
        })
        .sum())
}

/// Monte-Carlo estimate of [`expected_kl_start`] over `draws` samples of `X0`.
pub fn mc_expected_kl_start(
    model: &dyn ConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    tau: f64,
    kind: StartKind,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let start = start_summary(model, schedule, y, tau, kind)?;
    let k = schedule.coeffs(tau)?;
    let truth_var = State::from_element(y.len(), k.c2);
    let base = y * k.a;
    let mut total = 0.0;
    for _ in 0..draws {
        let x0 = model.sample_x0(y, rng);
        let truth = GaussianSummary {
            mean: &base + x0 * k.b,
            variance: truth_var.clone(),
        };
        total += kl_gaussian(&start, &truth)?;
    }
    Ok(total / draws as f64)
}
