//! Reverse-time samplers.
//!
//! * `odes3`: posterior-sampling start from `T` to `tau`, then Heun on the
//!   probability-flow ODE down to 0 with an Euler-only last step. NFE = 2N - 2.
//! * `em_sde`: Euler–Maruyama on the reverse SDE, first step using the
//!   closed-form drift at `T`. NFE = N.
//! * `em_start_heun`: a single Euler–Maruyama start step, then the same ODE leg.
//! * `deterministic_start_heun`: start at the kernel mean with no noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    pf_ode_drift, reverse_sde_drift, reverse_sde_drift_at_horizon, score_from_predictor,
};
use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::{standard_normal, CountingPredictor, DataPredictor, State};
use crate::schedule::{BridgeSchedule, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Odes3,
    EmSde,
    EmStartHeun,
    DeterministicStartHeun,
}

impl SamplerMethod {
    pub const ALL: [SamplerMethod; 4] = [
        SamplerMethod::Odes3,
        SamplerMethod::EmSde,
        SamplerMethod::EmStartHeun,
        SamplerMethod::DeterministicStartHeun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerMethod::Odes3 => "odes3",
            SamplerMethod::EmSde => "em_sde",
            SamplerMethod::EmStartHeun => "em_start_heun",
            SamplerMethod::DeterministicStartHeun => "deterministic_start_heun",
        }
    }

    /// Predictor evaluations for an `steps`-step grid.
    pub fn expected_nfe(self, steps: usize) -> u64 {
        match self {
            SamplerMethod::EmSde => steps as u64,
            _ => 2 * steps as u64 - 2,
        }
    }
}

/// Identifies the random stream of one run: ChaCha20 keyed by `seed`, on
/// stream `run`. Streams never overlap, so batches split cleanly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunSeed {
    pub seed: u64,
    pub run: u64,
}

impl RunSeed {
    pub fn new(seed: u64, run: u64) -> Self {
        Self { seed, run }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.run);
        rng
    }
}

pub type Trajectory = Vec<(f64, State)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub x0: State,
    pub trajectory: Option<Trajectory>,
    pub nfe: u64,
    pub seed: RunSeed,
}

/// A vector field `x' = F(x, t)` driven backwards in time.
pub trait DriftField {
    fn drift(&self, x: &State, t: f64) -> Result<State>;
}

impl<F> DriftField for F
where
    F: Fn(&State, f64) -> Result<State>,
{
    fn drift(&self, x: &State, t: f64) -> Result<State> {
        self(x, t)
    }
}

/// Probability-flow drift with the score recovered from a data predictor.
pub struct PfOdeField<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub schedule: &'a BridgeSchedule,
    pub y: &'a State,
}

impl<P: DataPredictor + ?Sized> DriftField for PfOdeField<'_, P> {
    fn drift(&self, x: &State, t: f64) -> Result<State> {
        let d = self.predictor.predict(x, self.y, t)?;
        let score = score_from_predictor(self.schedule, &d, x, self.y, t)?;
        Ok(pf_ode_drift(self.schedule, x, self.y, t, &score)?.into_value())
    }
}

/// Reverse-SDE drift with the score recovered from a data predictor. At
/// `t = T` (where `x` must equal `y`) the closed-form limit is used.
pub struct ReverseSdeField<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub schedule: &'a BridgeSchedule,
    pub y: &'a State,
}

impl<P: DataPredictor + ?Sized> DriftField for ReverseSdeField<'_, P> {
    fn drift(&self, x: &State, t: f64) -> Result<State> {
        let d = self.predictor.predict(x, self.y, t)?;
        if t == self.schedule.horizon() {
            return Ok(reverse_sde_drift_at_horizon(self.schedule, self.y, &d));
        }
        let score = score_from_predictor(self.schedule, &d, x, self.y, t)?;
        Ok(reverse_sde_drift(self.schedule, x, self.y, t, &score)?.into_value())
    }
}

fn finite(x: State, t: f64, stage: &'static str) -> Result<State> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(BridgeError::NonFinite { t, stage })
    }
}

/// One explicit Euler step from `t_from` to `t_to`.
pub fn euler_step(field: &dyn DriftField, x: &State, t_from: f64, t_to: f64) -> Result<State> {
    let d = field.drift(x, t_from)?;
    finite(x + d * (t_to - t_from), t_to, "euler step")
}

/// One Heun (explicit trapezoidal) step; evaluates the field exactly twice.
pub fn heun_step(field: &dyn DriftField, x: &State, t_from: f64, t_to: f64) -> Result<State> {
    let h = t_to - t_from;
    let d = field.drift(x, t_from)?;
    let predicted = finite(x + &d * h, t_to, "heun predictor")?;
    let d_next = field.drift(&predicted, t_to)?;
    finite(x + (d + d_next) * (0.5 * h), t_to, "heun corrector")
}

fn check_start_time(schedule: &BridgeSchedule, tau: f64) -> Result<()> {
    if tau > 0.0 && tau < schedule.horizon() {
        Ok(())
    } else {
        Err(BridgeError::Config(format!(
            "start time tau = {tau} must lie strictly inside (0, {})",
            schedule.horizon()
        )))
    }
}

/// Mean and standard deviation of the posterior-sampling start
/// `N(a_tau y + b_tau X̂0, c_tau² I)`.
pub fn posterior_start_params(
    prior_mean: &State,
    y: &State,
    tau: f64,
    schedule: &BridgeSchedule,
) -> Result<(State, f64)> {
    check_start_time(schedule, tau)?;
    check_dim(y.len(), prior_mean.len())?;
    let k = schedule.coeffs(tau)?;
    Ok((y * k.a + prior_mean * k.b, k.c))
}

/// Draws `X_tau` from the posterior-sampling start.
pub fn posterior_start<R: Rng + ?Sized>(
    prior_mean: &State,
    y: &State,
    tau: f64,
    schedule: &BridgeSchedule,
    rng: &mut R,
) -> Result<State> {
    let (mean, std) = posterior_start_params(prior_mean, y, tau, schedule)?;
    Ok(mean + standard_normal(y.len(), rng) * std)
}

/// Mean and standard deviation of one Euler–Maruyama step of the reverse
/// SDE from `T` to `tau`.
pub fn em_start_params(
    prior_mean: &State,
    y: &State,
    tau: f64,
    schedule: &BridgeSchedule,
) -> Result<(State, f64)> {
    check_dim(y.len(), prior_mean.len())?;
    let horizon = schedule.horizon();
    if tau == horizon {
        return Ok((y.clone(), 0.0));
    }
    check_start_time(schedule, tau)?;
    let drift = reverse_sde_drift_at_horizon(schedule, y, prior_mean);
    let mean = y + drift * (tau - horizon);
    Ok((mean, (schedule.g2(horizon) * (horizon - tau)).sqrt()))
}

/// Draws `X_tau` from a single Euler–Maruyama step from `T`.
pub fn em_start<R: Rng + ?Sized>(
    prior_mean: &State,
    y: &State,
    tau: f64,
    schedule: &BridgeSchedule,
    rng: &mut R,
) -> Result<State> {
    let (mean, std) = em_start_params(prior_mean, y, tau, schedule)?;
    if std == 0.0 {
        return Ok(mean);
    }
    Ok(mean + standard_normal(y.len(), rng) * std)
}

/// Integrates the ODE leg from `t_{N-1} = tau` down to `t_0 = 0`: Heun on
/// every step except the last, which is Euler only.
pub fn integrate_ode_leg(
    field: &dyn DriftField,
    x_tau: State,
    grid: &TimeGrid,
    mut trajectory: Option<&mut Trajectory>,
) -> Result<State> {
    let times = grid.times();
    let mut x = x_tau;
    for n in (1..grid.steps()).rev() {
        let (t_from, t_to) = (times[n], times[n - 1]);
        x = if n == 1 {
            euler_step(field, &x, t_from, t_to)?
        } else {
            heun_step(field, &x, t_from, t_to)?
        };
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push((t_to, x.clone()));
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StartKind {
    Posterior,
    EulerMaruyama,
    Deterministic,
}

fn start_then_ode<P: DataPredictor + ?Sized>(
    kind: StartKind,
    predictor: &P,
    y: &State,
    grid: &TimeGrid,
    schedule: &BridgeSchedule,
    seed: RunSeed,
    record: bool,
) -> Result<SampleRun> {
    check_dim(predictor.dim(), y.len())?;
    let counted = CountingPredictor::new(predictor);
    let horizon = schedule.horizon();
    let tau = grid.tau();
    let mut rng = seed.rng();

    let prior_mean = counted.predict(y, y, horizon)?;
    let x_tau = match kind {
        StartKind::Posterior => posterior_start(&prior_mean, y, tau, schedule, &mut rng)?,
        StartKind::EulerMaruyama => em_start(&prior_mean, y, tau, schedule, &mut rng)?,
        StartKind::Deterministic => posterior_start_params(&prior_mean, y, tau, schedule)?.0,
    };
    let x_tau = finite(x_tau, tau, "start step")?;

    let mut trajectory = record.then(|| vec![(horizon, y.clone()), (tau, x_tau.clone())]);
    let field = PfOdeField {
        predictor: &counted,
        schedule,
        y,
    };
    let x0 = integrate_ode_leg(&field, x_tau, grid, trajectory.as_mut())?;
    Ok(SampleRun {
        x0,
        trajectory,
        nfe: counted.nfe(),
        seed,
    })
}

/// ODE sampler with a stochastic (posterior-sampling) start.
pub fn odes3_sample<P: DataPredictor + ?Sized>(
    predictor: &P,
    y: &State,
    grid: &TimeGrid,
    schedule: &BridgeSchedule,
    seed: RunSeed,
    record: bool,
) -> Result<SampleRun> {
    start_then_ode(StartKind::Posterior, predictor, y, grid, schedule, seed, record)
}

/// Single Euler–Maruyama start step followed by the Heun ODE leg.
pub fn em_start_heun_sample<P: DataPredictor + ?Sized>(
    predictor: &P,
    y: &State,
    grid: &TimeGrid,
    schedule: &BridgeSchedule,
    seed: RunSeed,
    record: bool,
) -> Result<SampleRun> {
    start_then_ode(StartKind::EulerMaruyama, predictor, y, grid, schedule, seed, record)
}

/// Noise-free start at the kernel mean, then the Heun ODE leg. The seed is
/// recorded but never drawn from.
pub fn deterministic_start_heun<P: DataPredictor + ?Sized>(
    predictor: &P,
    y: &State,
    grid: &TimeGrid,
    schedule: &BridgeSchedule,
    seed: RunSeed,
    record: bool,
) -> Result<SampleRun> {
    start_then_ode(StartKind::Deterministic, predictor, y, grid, schedule, seed, record)
}

/// Euler–Maruyama over `grid`, backwards from `x_start` at `T`.
///
/// `increment(n, dt)` returns the Brownian increment for the step from
/// `t_n` to `t_{n-1}` (variance `dt` per coordinate).
pub fn euler_maruyama(
    field: &dyn DriftField,
    diffusion: &dyn Fn(f64) -> f64,
    x_start: State,
    grid: &TimeGrid,
    mut increment: impl FnMut(usize, f64) -> State,
    mut trajectory: Option<&mut Trajectory>,
) -> Result<State> {
    let times = grid.times();
    let mut x = x_start;
    for n in (1..=grid.steps()).rev() {
        let (t_from, t_to) = (times[n], times[n - 1]);
        let drift = field.drift(&x, t_from)?;
        let dw = increment(n, t_from - t_to);
        x = finite(
            x + drift * (t_to - t_from) + dw * diffusion(t_from),
            t_to,
            "euler-maruyama step",
        )?;
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push((t_to, x.clone()));
        }
    }
    Ok(x)
}

/// Euler–Maruyama reverse-SDE sampler with caller-supplied Brownian
/// increments (for common-random-number studies).
pub fn em_sde_sample_with_increments<P: DataPredictor + ?Sized>(
    predictor: &P,
    y: &State,
    grid: &TimeGrid,
    schedule: &BridgeSchedule,
    increment: impl FnMut(usize, f64) -> State,
    seed: RunSeed,
    record: bool,
) -> Result<SampleRun> {
    check_dim(predictor.dim(), y.len())?;
    let counted = CountingPredictor::new(predictor);
    let field = ReverseSdeField {
        predictor: &counted,
        schedule,
        y,
    };
    let mut trajectory = record.then(|| vec![(schedule.horizon(), y.clone())]);
    let x0 = euler_maruyama(
        &field,
        &|t| schedule.g(t),
        y.clone(),
        grid,
        increment,
        trajectory.as_mut(),
    )?;
    Ok(SampleRun {
        x0,
        trajectory,
        nfe: counted.nfe(),
        seed,
    })
}

/// Euler–Maruyama reverse-SDE sampler.
pub fn em_sde_sample<P: DataPredictor + ?Sized>(
    predictor: &P,
    y: &State,
    grid: &TimeGrid,
    schedule: &BridgeSchedule,
    seed: RunSeed,
    record: bool,
) -> Result<SampleRun> {
    let mut rng = seed.rng();
    let d = y.len();
    em_sde_sample_with_increments(
        predictor,
        y,
        grid,
        schedule,
        |_, dt| standard_normal(d, &mut rng) * dt.sqrt(),
        seed,
        record,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub grid: TimeGrid,
    pub record_trajectory: bool,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn run<P: DataPredictor + ?Sized>(
        &self,
        predictor: &P,
        y: &State,
        schedule: &BridgeSchedule,
        run_index: u64,
    ) -> Result<SampleRun> {
        let seed = RunSeed::new(self.seed, run_index);
        let record = self.record_trajectory;
        let grid = &self.grid;
        match self.method {
            SamplerMethod::Odes3 => odes3_sample(predictor, y, grid, schedule, seed, record),
            SamplerMethod::EmSde => em_sde_sample(predictor, y, grid, schedule, seed, record),
            SamplerMethod::EmStartHeun => {
                em_start_heun_sample(predictor, y, grid, schedule, seed, record)
            }
            SamplerMethod::DeterministicStartHeun => {
                deterministic_start_heun(predictor, y, grid, schedule, seed, record)
            }
        }
    }

    /// Runs `0..runs` in parallel; results come back in run order.
    pub fn run_batch<P: DataPredictor + ?Sized>(
        &self,
        predictor: &P,
        y: &State,
        schedule: &BridgeSchedule,
        runs: usize,
    ) -> Result<Vec<SampleRun>> {
        (0..runs as u64)
            .into_par_iter()
            .map(|i| self.run(predictor, y, schedule, i))
            .collect()
    }
}
