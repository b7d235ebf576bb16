//! Drift fields of the bridge: the h-transform term, score recovery from a
//! data predictor, and the reverse-SDE / probability-flow ODE drifts.
//!
//! Drifts take the score as an argument so the same path serves exact
//! oracle scores and predictor-derived ones. Requests at `t = 0` or `t = T`
//! are errors, never clamps.

use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::State;
use crate::schedule::BridgeSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    /// `score - h`, the bracketed non-linear term of the reverse SDE.
    ReverseSdeNonlinear,
    /// Full probability-flow ODE drift.
    PfOdeTotal,
    /// Full reverse-SDE drift.
    SdeTotal,
}

/// A drift vector known to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEvaluation {
    value: State,
    t: f64,
    kind: DriftKind,
}

impl DriftEvaluation {
    pub fn new(value: State, t: f64, kind: DriftKind) -> Result<Self> {
        if value.iter().all(|v| v.is_finite()) {
            Ok(Self { value, t, kind })
        } else {
            Err(BridgeError::NonFinite {
                t,
                stage: "drift evaluation",
            })
        }
    }

    pub fn value(&self) -> &State {
        &self.value
    }

    pub fn into_value(self) -> State {
        self.value
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn kind(&self) -> DriftKind {
        self.kind
    }
}

fn interior(schedule: &BridgeSchedule, t: f64, what: &'static str) -> Result<()> {
    let horizon = schedule.horizon();
    if t.is_nan() || t < 0.0 || t > horizon {
        return Err(BridgeError::Domain(format!("t = {t} outside [0, {horizon}]")));
    }
    if t == 0.0 || t == horizon {
        return Err(BridgeError::SingularTime { t, what });
    }
    Ok(())
}

/// `∇ log p_{T|t}(y | x_t) = ((alpha_t/alpha_T) y - x_t) / (alpha_t² (rho_T² - rho_t²))`.
pub fn h_drift(schedule: &BridgeSchedule, x_t: &State, y: &State, t: f64) -> Result<State> {
    check_dim(x_t.len(), y.len())?;
    let alpha = schedule.alpha(t)?;
    if t == schedule.horizon() {
        return Err(BridgeError::SingularTime {
            t,
            what: "h-transform drift is undefined at T",
        });
    }
    let gap = schedule.rho2_gap_unchecked(t);
    let ratio = alpha / schedule.alpha_end();
    Ok((y * ratio - x_t) / (alpha * alpha * gap))
}

/// Score estimate `(b_t D - x_t + a_t y) / c_t²` from a data prediction.
pub fn score_from_predictor(
    schedule: &BridgeSchedule,
    prediction: &State,
    x_t: &State,
    y: &State,
    t: f64,
) -> Result<State> {
    check_dim(x_t.len(), prediction.len())?;
    check_dim(x_t.len(), y.len())?;
    let k = schedule.coeffs(t)?;
    if k.c2 == 0.0 {
        return Err(BridgeError::SingularTime {
            t,
            what: "score needs c_t > 0",
        });
    }
    Ok((prediction * k.b - x_t + y * k.a) / k.c2)
}

/// `score - h`, the reverse-SDE non-linear term in score form.
pub fn reverse_sde_nonlinear(
    schedule: &BridgeSchedule,
    x_t: &State,
    y: &State,
    t: f64,
    score: &State,
) -> Result<DriftEvaluation> {
    interior(schedule, t, "reverse-SDE drift needs 0 < t < T")?;
    check_dim(x_t.len(), score.len())?;
    let h = h_drift(schedule, x_t, y, t)?;
    DriftEvaluation::new(score - h, t, DriftKind::ReverseSdeNonlinear)
}

/// The same non-linear term written through the posterior mean:
/// `-(x_t - alpha_t X̂0) / (alpha_t² rho_t²)`.
pub fn reverse_sde_nonlinear_from_prediction(
    schedule: &BridgeSchedule,
    x_t: &State,
    t: f64,
    prediction: &State,
) -> Result<DriftEvaluation> {
    interior(schedule, t, "reverse-SDE drift needs 0 < t < T")?;
    check_dim(x_t.len(), prediction.len())?;
    let alpha = schedule.alpha_unchecked(t);
    let rho2 = schedule.rho2_unchecked(t);
    DriftEvaluation::new(
        -(x_t - prediction * alpha) / (alpha * alpha * rho2),
        t,
        DriftKind::ReverseSdeNonlinear,
    )
}

/// `f(t) x_t - g²(t) (score - h)`.
pub fn reverse_sde_drift(
    schedule: &BridgeSchedule,
    x_t: &State,
    y: &State,
    t: f64,
    score: &State,
) -> Result<DriftEvaluation> {
    let nonlinear = reverse_sde_nonlinear(schedule, x_t, y, t, score)?;
    DriftEvaluation::new(
        x_t * schedule.f(t) - nonlinear.value() * schedule.g2(t),
        t,
        DriftKind::SdeTotal,
    )
}

/// Reverse-SDE drift through the posterior mean, `f x_t + g² (x_t - alpha X̂0) / (alpha² rho²)`.
pub fn reverse_sde_drift_from_prediction(
    schedule: &BridgeSchedule,
    x_t: &State,
    t: f64,
    prediction: &State,
) -> Result<DriftEvaluation> {
    let nonlinear = reverse_sde_nonlinear_from_prediction(schedule, x_t, t, prediction)?;
    DriftEvaluation::new(
        x_t * schedule.f(t) - nonlinear.value() * schedule.g2(t),
        t,
        DriftKind::SdeTotal,
    )
}

/// Probability-flow drift `f(t) x_t - g²(t) (score/2 - h)`.
pub fn pf_ode_drift(
    schedule: &BridgeSchedule,
    x_t: &State,
    y: &State,
    t: f64,
    score: &State,
) -> Result<DriftEvaluation> {
    interior(schedule, t, "probability-flow drift is singular at the endpoints")?;
    check_dim(x_t.len(), score.len())?;
    let h = h_drift(schedule, x_t, y, t)?;
    DriftEvaluation::new(
        x_t * schedule.f(t) - (score * 0.5 - h) * schedule.g2(t),
        t,
        DriftKind::PfOdeTotal,
    )
}

/// Limit of the reverse-SDE non-linear term as `t -> T` along `x_t -> y`:
/// `-(y - alpha_T X̂0) / (alpha_T² rho_T²)`.
pub fn sde_limit_drift(schedule: &BridgeSchedule, y: &State, prior_mean: &State) -> State {
    let alpha = schedule.alpha_end();
    -(y - prior_mean * alpha) / (alpha * alpha * schedule.rho2_end())
}

/// Full reverse-SDE drift at `t = T` with `X_T = y`, using the limit form.
pub fn reverse_sde_drift_at_horizon(
    schedule: &BridgeSchedule,
    y: &State,
    prior_mean: &State,
) -> State {
    let t = schedule.horizon();
    y * schedule.f(t) - sde_limit_drift(schedule, y, prior_mean) * schedule.g2(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ConditionalModel, GaussianConditionalModel};
    use approx::assert_relative_eq;

    fn bb() -> BridgeSchedule {
        BridgeSchedule::brownian_bridge(1.0, 1.0).unwrap()
    }

    fn v(x: &[f64]) -> State {
        State::from_column_slice(x)
    }

    #[test]
    fn h_drift_examples() {
        let s = bb();
        assert_relative_eq!(h_drift(&s, &v(&[0.0]), &v(&[1.0]), 0.5).unwrap()[0], 2.0);
        assert_eq!(h_drift(&s, &v(&[1.0]), &v(&[1.0]), 0.9).unwrap()[0], 0.0);

        let vp = BridgeSchedule::variance_preserving(0.1, 2.0, 1.0).unwrap();
        let y = v(&[1.3, -2.0]);
        let t = 0.4;
        let on_target = &y * (vp.alpha(t).unwrap() / vp.alpha_end());
        assert!(h_drift(&vp, &on_target, &y, t).unwrap().norm() < 1e-15);

        assert!(matches!(
            h_drift(&s, &v(&[0.0]), &v(&[1.0]), 1.0),
            Err(BridgeError::SingularTime { .. })
        ));
    }

    #[test]
    fn score_from_predictor_examples() {
        let s = bb();
        let sc = score_from_predictor(&s, &v(&[0.0]), &v(&[0.5]), &v(&[0.0]), 0.5).unwrap();
        assert_relative_eq!(sc[0], -2.0);

        let k = s.coeffs(0.3).unwrap();
        let y = v(&[1.0, 2.0]);
        let d = v(&[-0.5, 0.25]);
        let x = &y * k.a + &d * k.b;
        assert!(score_from_predictor(&s, &d, &x, &y, 0.3).unwrap().norm() < 1e-12);

        assert!(score_from_predictor(&s, &d, &x, &y, 0.0).is_err());
        assert!(score_from_predictor(&s, &d, &x, &y, 1.0).is_err());
    }

    #[test]
    fn sde_drift_with_score_equal_h_is_linear_part() {
        let s = BridgeSchedule::variance_preserving(0.5, 3.0, 1.0).unwrap();
        let x = v(&[0.3, -1.0]);
        let y = v(&[1.0, 0.0]);
        let t = 0.6;
        let h = h_drift(&s, &x, &y, t).unwrap();
        let d = reverse_sde_drift(&s, &x, &y, t, &h).unwrap();
        assert_relative_eq!(*d.value(), &x * s.f(t), epsilon = 1e-15);
        assert_eq!(d.kind(), DriftKind::SdeTotal);
    }

    #[test]
    fn sde_drift_score_and_prediction_routes_agree() {
        for s in [bb(), BridgeSchedule::variance_preserving(0.1, 8.0, 1.0).unwrap()] {
            let m = GaussianConditionalModel::isotropic(v(&[0.4, -0.3]), 0.8).unwrap();
            let y = v(&[1.5, 0.5]);
            for &t in &[0.05, 0.3, 0.7, 0.95] {
                let x = v(&[0.2, 1.1]);
                let d = m.posterior_mean(&x, &y, t, &s).unwrap();
                let score = score_from_predictor(&s, &d, &x, &y, t).unwrap();
                let via_score = reverse_sde_drift(&s, &x, &y, t, &score).unwrap();
                let via_pred = reverse_sde_drift_from_prediction(&s, &x, t, &d).unwrap();
                let scale = 1.0 + via_pred.value().norm();
                assert!((via_score.value() - via_pred.value()).norm() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn pf_ode_drift_examples() {
        let s = bb();
        let d = pf_ode_drift(&s, &v(&[0.5]), &v(&[0.0]), 0.5, &v(&[-2.0])).unwrap();
        assert_relative_eq!(d.value()[0], 0.0, epsilon = 1e-15);

        let m = GaussianConditionalModel::isotropic(v(&[0.0, 0.0]), 1.0).unwrap();
        let zero = v(&[0.0, 0.0]);
        let pm = m.posterior_mean(&zero, &zero, 0.4, &s).unwrap();
        let score = score_from_predictor(&s, &pm, &zero, &zero, 0.4).unwrap();
        assert_eq!(pf_ode_drift(&s, &zero, &zero, 0.4, &score).unwrap().value().norm(), 0.0);

        assert!(matches!(
            pf_ode_drift(&s, &zero, &zero, 1.0, &zero),
            Err(BridgeError::SingularTime { .. })
        ));
        assert!(matches!(
            pf_ode_drift(&s, &zero, &zero, 0.0, &zero),
            Err(BridgeError::SingularTime { .. })
        ));
    }

    #[test]
    fn sde_limit_examples() {
        let s = bb();
        assert_relative_eq!(sde_limit_drift(&s, &v(&[2.0]), &v(&[0.0]))[0], -2.0);
        let vp = BridgeSchedule::variance_preserving(0.1, 2.0, 1.0).unwrap();
        let mu = v(&[0.7]);
        let y = &mu * vp.alpha_end();
        assert_eq!(sde_limit_drift(&vp, &y, &mu)[0], 0.0);
    }

    #[test]
    fn sde_limit_matches_nonlinear_term_near_horizon() {
        let s = bb();
        let m = GaussianConditionalModel::isotropic(v(&[0.0]), 1.0).unwrap();
        let y = v(&[2.0]);
        let t = 1.0 - 1e-6;
        let k = s.coeffs(t).unwrap();
        let x = &y * k.a + m.prior_mean(&y) * k.b;
        let d = m.posterior_mean(&x, &y, t, &s).unwrap();
        let score = score_from_predictor(&s, &d, &x, &y, t).unwrap();
        let near = reverse_sde_nonlinear(&s, &x, &y, t, &score).unwrap();
        let limit = sde_limit_drift(&s, &y, &m.prior_mean(&y));
        assert!((near.value() - limit).norm() < 1e-4);
    }

    #[test]
    fn non_finite_drift_rejected() {
        assert!(matches!(
            DriftEvaluation::new(v(&[f64::NAN]), 0.5, DriftKind::PfOdeTotal),
            Err(BridgeError::NonFinite { .. })
        ));
    }
}
