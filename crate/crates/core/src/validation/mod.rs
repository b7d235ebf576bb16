//! Numerical verifiers: closed-form KL analysis of the start step, the
//! endpoint behaviour of the reverse-SDE and probability-flow drifts, a
//! Gaussian flow oracle for distributional ground truth, solver-order
//! studies and sample metrics.

mod convergence;
mod flow;
mod kl;
mod metrics;
mod projection;
mod theorems;

use serde::Serialize;

use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::State;

pub use convergence::{
    convergence_order, em_sde_order_study, field_order_study, fitted_order, ode_leg_order_study,
    ConvergenceSettings, ConvergenceStudy, FieldIntegrator,
};
pub use flow::{gaussian_flow_oracle, pf_ode_affine_coeffs, FLOW_ORACLE_MIN_STEPS};
pub use kl::{
    expected_kl_start, kl_gaussian, mc_expected_kl_start, start_summary, StartKind,
};
pub use metrics::{per_dimension_w1, projected_w1, sample_summary, wasserstein1_1d};
pub use projection::{optimal_gaussian_projection, projection_objective};
pub use theorems::{
    check_theorem1, check_theorem2, check_theorem2_with_noise, check_theorem3, Theorem3Case,
};

/// Diagonal Gaussian described by its mean and per-dimension variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: State,
    pub variance: State,
}

impl GaussianSummary {
    pub fn new(mean: State, variance: State) -> Result<Self> {
        check_dim(mean.len(), variance.len())?;
        if variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(BridgeError::Domain("variances must be >= 0".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn isotropic(mean: State, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, State::from_element(d, variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TheoremId {
    T1,
    T2,
    T3,
}

impl TheoremId {
    pub fn name(self) -> &'static str {
        match self {
            TheoremId::T1 => "T1",
            TheoremId::T2 => "T2",
            TheoremId::T3 => "T3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Outcome of one theorem sweep. `params` holds the swept values (epsilons
/// or taus), `observed` the primary measurement per entry and `auxiliary`
/// a second series where the check needs one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub theorem: TheoremId,
    pub params: Vec<f64>,
    pub observed: Vec<f64>,
    pub auxiliary: Vec<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

pub(crate) fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}
