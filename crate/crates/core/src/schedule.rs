//! Bridge noise schedules and the time-dependent coefficients of the
//! h-transformed forward process.
//!
//! A schedule is the pair `(f, g)` of the linear forward SDE
//! `dX = f(t) X dt + g(t) dW` on `[0, T]`. Everything downstream is expressed
//! through
//!
//! ```text
//! alpha_t = exp(∫_0^t f),        rho2_t = ∫_0^t g²(s) / alpha_s² ds
//! ```
//!
//! and the bridge kernel `X_t | X_0, y ~ N(a_t y + b_t X_0, c_t² I)`.

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};

/// Drift/diffusion family of the forward process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// `f = 0`, `g = sigma`.
    BrownianBridge { sigma: f64 },
    /// `f = -beta/2`, `g² = beta`, with `beta` linear in `t` from
    /// `beta_min` at 0 to `beta_max` at `T`.
    VariancePreserving { beta_min: f64, beta_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSchedule {
    kind: ScheduleKind,
    horizon: f64,
}

/// `(a_t, b_t, c_t)` of the bridge transition kernel at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoeffs {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `c²`, kept separately so callers never square a rounded root.
    pub c2: f64,
}

impl BridgeSchedule {
    pub fn new(kind: ScheduleKind, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(BridgeError::Config(format!(
                "horizon must be finite and > 0, got {horizon}"
            )));
        }
        match kind {
            ScheduleKind::BrownianBridge { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(BridgeError::Config(format!(
                        "brownian bridge sigma must be > 0, got {sigma}"
                    )));
                }
            }
            ScheduleKind::VariancePreserving { beta_min, beta_max } => {
                if !(beta_min.is_finite() && beta_max.is_finite()) {
                    return Err(BridgeError::Config("beta bounds must be finite".into()));
                }
                if beta_min < 0.0 || beta_max < beta_min || beta_max <= 0.0 {
                    return Err(BridgeError::Config(format!(
                        "need 0 <= beta_min <= beta_max and beta_max > 0, got ({beta_min}, {beta_max})"
                    )));
                }
            }
        }
        Ok(Self { kind, horizon })
    }

    pub fn brownian_bridge(sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::BrownianBridge { sigma }, horizon)
    }

    pub fn variance_preserving(beta_min: f64, beta_max: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::VariancePreserving { beta_min, beta_max }, horizon)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_nan() || t < 0.0 || t > self.horizon {
            Err(BridgeError::Domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )))
        } else {
            Ok(())
        }
    }

    /// Linear drift coefficient `f(t)`.
    pub fn f(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::BrownianBridge { .. } => 0.0,
            ScheduleKind::VariancePreserving { .. } => -0.5 * self.beta(t),
        }
    }

    /// Squared diffusion `g²(t)`.
    pub fn g2(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::BrownianBridge { sigma } => sigma * sigma,
            ScheduleKind::VariancePreserving { .. } => self.beta(t),
        }
    }

    pub fn g(&self, t: f64) -> f64 {
        self.g2(t).sqrt()
    }

    fn beta(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VariancePreserving { beta_min, beta_max } => {
                beta_min + (beta_max - beta_min) * t / self.horizon
            }
            ScheduleKind::BrownianBridge { .. } => 0.0,
        }
    }

    /// `∫_s^t beta` for the VP family.
    fn beta_integral(&self, s: f64, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VariancePreserving { beta_min, beta_max } => {
                (t - s) * (beta_min + (beta_max - beta_min) * (t + s) / (2.0 * self.horizon))
            }
            ScheduleKind::BrownianBridge { .. } => 0.0,
        }
    }

    pub(crate) fn alpha_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::BrownianBridge { .. } => 1.0,
            ScheduleKind::VariancePreserving { .. } => (-0.5 * self.beta_integral(0.0, t)).exp(),
        }
    }

    pub(crate) fn rho2_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::BrownianBridge { sigma } => sigma * sigma * t,
            // d/dt exp(B(t)) = beta(t) exp(B(t)) and 1/alpha² = exp(B).
            ScheduleKind::VariancePreserving { .. } => self.beta_integral(0.0, t).exp_m1(),
        }
    }

    /// `rho2_T - rho2_t`, computed without cancellation near `T`.
    pub(crate) fn rho2_gap_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::BrownianBridge { sigma } => sigma * sigma * (self.horizon - t),
            ScheduleKind::VariancePreserving { .. } => {
                self.beta_integral(0.0, t).exp() * self.beta_integral(t, self.horizon).exp_m1()
            }
        }
    }

    /// `alpha_t = exp(∫_0^t f)`.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.alpha_unchecked(t))
    }

    /// `rho2_t = ∫_0^t g²/alpha²`.
    pub fn rho2(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.rho2_unchecked(t))
    }

    pub fn alpha_end(&self) -> f64 {
        self.alpha_unchecked(self.horizon)
    }

    pub fn rho2_end(&self) -> f64 {
        self.rho2_unchecked(self.horizon)
    }

    /// Kernel coefficients `(a_t, b_t, c_t)`.
    ///
    /// Exact endpoints: `(0, 1, 0)` at `t = 0` and `(1, 0, 0)` at `t = T`.
    pub fn coeffs(&self, t: f64) -> Result<BridgeCoeffs> {
        self.check_time(t)?;
        let alpha = self.alpha_unchecked(t);
        let rho2 = self.rho2_unchecked(t);
        let rho2_end = self.rho2_end();
        let remaining = self.rho2_gap_unchecked(t) / rho2_end;
        let a = rho2 * alpha / (rho2_end * self.alpha_end());
        let b = alpha * remaining;
        let c2 = alpha * alpha * rho2 * remaining;
        Ok(BridgeCoeffs {
            t,
            a,
            b,
            c: c2.sqrt(),
            c2,
        })
    }
}

/// Knot placement for [`TimeGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Piecewise-quadratic warp, symmetric about the midpoint, denser near
    /// both endpoints.
    Quadratic,
}

impl Spacing {
    fn warp(self, u: f64) -> f64 {
        match self {
            Spacing::Uniform => u,
            Spacing::Quadratic => {
                if u <= 0.5 {
                    2.0 * u * u
                } else {
                    1.0 - 2.0 * (1.0 - u) * (1.0 - u)
                }
            }
        }
    }
}

/// Discretization `0 = t_0 < t_1 < ... < t_{N-1} = tau < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Validates an explicit knot list.
    pub fn from_times(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.len() < 3 {
            return Err(BridgeError::Config(format!(
                "a grid needs N >= 2 steps, got {} knots",
                times.len()
            )));
        }
        if times[0] != 0.0 || *times.last().unwrap() != horizon {
            return Err(BridgeError::Config(format!(
                "grid must start at 0 and end at T = {horizon}"
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(BridgeError::Config("grid must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `t_{N-1}`, where the stochastic start lands.
    pub fn tau(&self) -> f64 {
        self.times[self.times.len() - 2]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Grid whose ODE leg `[0, tau]` is split into `ode_steps` intervals,
    /// followed by the single start step `tau -> T`. Keeping `tau` fixed while
    /// refining is what solver-order studies need.
    pub fn with_fixed_tau(
        schedule: &BridgeSchedule,
        tau: f64,
        ode_steps: usize,
        spacing: Spacing,
    ) -> Result<Self> {
        let horizon = schedule.horizon();
        if !(tau > 0.0 && tau < horizon) {
            return Err(BridgeError::Config(format!("tau = {tau} must lie in (0, {horizon})")));
        }
        if ode_steps < 1 {
            return Err(BridgeError::Config("ode leg needs at least one step".into()));
        }
        let mut times: Vec<f64> = (0..=ode_steps)
            .map(|i| tau * spacing.warp(i as f64 / ode_steps as f64))
            .collect();
        times[ode_steps] = tau;
        times.push(horizon);
        Self::from_times(times, horizon)
    }
}

/// Builds an `N`-step grid on `[0, T]`.
///
/// `t_min` is the smallest admissible first knot: construction fails unless
/// `t_1 > t_min`.
pub fn make_time_grid(
    schedule: &BridgeSchedule,
    steps: usize,
    spacing: Spacing,
    t_min: f64,
) -> Result<TimeGrid> {
    if steps < 2 {
        return Err(BridgeError::Config(format!("N must be >= 2, got {steps}")));
    }
    if !(t_min >= 0.0) {
        return Err(BridgeError::Config(format!("t_min must be >= 0, got {t_min}")));
    }
    let horizon = schedule.horizon();
    let mut times: Vec<f64> = (0..=steps)
        .map(|i| horizon * spacing.warp(i as f64 / steps as f64))
        .collect();
    times[0] = 0.0;
    times[steps] = horizon;
    if !(times[1] > t_min) {
        return Err(BridgeError::Config(format!(
            "first knot t_1 = {} does not exceed t_min = {t_min}",
            times[1]
        )));
    }
    TimeGrid::from_times(times, horizon)
}
