//! Empirical solver order: errors against a high-accuracy reference under
//! grid refinement, with common random numbers across grid sizes.

use rayon::prelude::*;
use serde::Serialize;

use super::flow::gaussian_flow_oracle;
use super::GaussianSummary;
use crate::error::{BridgeError, Result};
use crate::oracle::{standard_normal, ConditionalModel, GaussianConditionalModel, OraclePredictor, State};
use crate::samplers::{
    em_sde_sample_with_increments, euler_step, heun_step, integrate_ode_leg, posterior_start,
    DriftField, PfOdeField, RunSeed, SamplerMethod,
};
use crate::schedule::{make_time_grid, BridgeSchedule, Spacing, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln h`; `None` when some
    /// error is exactly zero.
    pub order: Option<f64>,
}

impl ConvergenceStudy {
    fn new(step_sizes: Vec<f64>, errors: Vec<f64>) -> Self {
        let order = fitted_order(&step_sizes, &errors);
        Self {
            step_sizes,
            errors,
            order,
        }
    }
}

/// Slope of the least-squares line through `(ln h, ln error)`.
pub fn fitted_order(step_sizes: &[f64], errors: &[f64]) -> Option<f64> {
    if step_sizes.len() != errors.len() || step_sizes.len() < 2 {
        return None;
    }
    if errors.iter().any(|e| !(*e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldIntegrator {
    Euler,
    Heun,
}

/// Order study for an arbitrary field integrated on uniform grids from
/// `t_start` to `t_end`, against a known `reference` endpoint.
pub fn field_order_study(
    field: &dyn DriftField,
    x_start: &State,
    t_start: f64,
    t_end: f64,
    step_counts: &[usize],
    integrator: FieldIntegrator,
    reference: &State,
) -> Result<ConvergenceStudy> {
    let mut hs = Vec::with_capacity(step_counts.len());
    let mut errors = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let h = (t_end - t_start) / n as f64;
        let mut x = x_start.clone();
        for i in 0..n {
            let t0 = t_start + i as f64 * h;
            let t1 = if i + 1 == n { t_end } else { t0 + h };
            x = match integrator {
                FieldIntegrator::Euler => euler_step(field, &x, t0, t1)?,
                FieldIntegrator::Heun => heun_step(field, &x, t0, t1)?,
            };
        }
        hs.push(h.abs());
        errors.push((x - reference).norm());
    }
    Ok(ConvergenceStudy::new(hs, errors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSettings {
    /// Step counts `N` of the grids being compared.
    pub grid_sizes: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    /// Fixed start time of the ODE leg.
    pub tau: f64,
    /// Steps of the reference solution (at least 10⁴).
    pub reference_steps: usize,
}

const MIN_REFERENCE_STEPS: usize = 10_000;

fn check_settings(settings: &ConvergenceSettings) -> Result<()> {
    if settings.grid_sizes.len() < 2 {
        return Err(BridgeError::Config("need at least two grid sizes".into()));
    }
    if settings.runs == 0 {
        return Err(BridgeError::Config("need at least one run".into()));
    }
    if settings.reference_steps < MIN_REFERENCE_STEPS {
        return Err(BridgeError::Config(format!(
            "reference needs at least {MIN_REFERENCE_STEPS} steps"
        )));
    }
    Ok(())
}

fn rms_over_runs(
    runs: usize,
    sizes: usize,
    per_run: impl Fn(u64) -> Result<Vec<f64>> + Sync + Send,
) -> Result<Vec<f64>> {
    let all: Vec<Vec<f64>> = (0..runs as u64).into_par_iter().map(per_run).collect::<Result<_>>()?;
    Ok((0..sizes)
        .map(|j| (all.iter().map(|e| e[j] * e[j]).sum::<f64>() / runs as f64).sqrt())
        .collect())
}

/// Order of the Heun ODE leg (with its Euler-only last step). Each run
/// draws one posterior start at the fixed `tau`; grids `N` put `N - 1`
/// uniform steps on `[0, tau]`. The reference is the flow oracle applied
/// to the point start.
pub fn ode_leg_order_study(
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceStudy> {
    check_settings(settings)?;
    let grids: Vec<TimeGrid> = settings
        .grid_sizes
        .iter()
        .map(|&n| {
            if n < 2 {
                return Err(BridgeError::Config(format!("grid size {n} < 2")));
            }
            TimeGrid::with_fixed_tau(schedule, settings.tau, n - 1, Spacing::Uniform)
        })
        .collect::<Result<_>>()?;
    let predictor = OraclePredictor::new(model, schedule);
    let prior = model.prior_mean(y);
    let errors = rms_over_runs(settings.runs, grids.len(), |run| {
        let mut rng = RunSeed::new(settings.seed, run).rng();
        let x_tau = posterior_start(&prior, y, settings.tau, schedule, &mut rng)?;
        let point = GaussianSummary::isotropic(x_tau.clone(), 0.0)?;
        let reference =
            gaussian_flow_oracle(model, schedule, y, &point, settings.tau, settings.reference_steps)?
                .mean;
        let field = PfOdeField {
            predictor: &predictor,
            schedule,
            y,
        };
        grids
            .iter()
            .map(|g| Ok((integrate_ode_leg(&field, x_tau.clone(), g, None)? - &reference).norm()))
            .collect()
    })?;
    let hs = settings
        .grid_sizes
        .iter()
        .map(|&n| settings.tau / (n - 1) as f64)
        .collect();
    Ok(ConvergenceStudy::new(hs, errors))
}

/// Strong order of the Euler–Maruyama reverse-SDE sampler on uniform grids.
/// Every grid reuses the Brownian path of a `reference_steps` fine grid,
/// which also provides the reference solution.
pub fn em_sde_order_study(
    model: &dyn ConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceStudy> {
    check_settings(settings)?;
    let fine_steps = settings.reference_steps;
    if let Some(n) = settings.grid_sizes.iter().find(|&&n| n == 0 || fine_steps % n != 0) {
        return Err(BridgeError::Config(format!(
            "grid size {n} does not divide the reference step count {fine_steps}"
        )));
    }
    let fine = make_time_grid(schedule, fine_steps, Spacing::Uniform, 0.0)?;
    let grids: Vec<TimeGrid> = settings
        .grid_sizes
        .iter()
        .map(|&n| make_time_grid(schedule, n, Spacing::Uniform, 0.0))
        .collect::<Result<_>>()?;
    let predictor = OraclePredictor::new(model, schedule);
    let d = y.len();
    let errors = rms_over_runs(settings.runs, grids.len(), |run| {
        let seed = RunSeed::new(settings.seed, run);
        let mut rng = seed.rng();
        let times = fine.times();
        // dw[k] drives the fine step from t_k to t_{k-1}; index 0 unused
        let mut dw = vec![State::zeros(d)];
        for k in 1..=fine_steps {
            dw.push(standard_normal(d, &mut rng) * (times[k] - times[k - 1]).sqrt());
        }
        let reference = em_sde_sample_with_increments(
            &predictor,
            y,
            &fine,
            schedule,
            |n, _| dw[n].clone(),
            seed,
            false,
        )?
        .x0;
        grids
            .iter()
            .map(|g| {
                let ratio = fine_steps / g.steps();
                let coarse = em_sde_sample_with_increments(
                    &predictor,
                    y,
                    g,
                    schedule,
                    |n, _| {
                        ((n - 1) * ratio + 1..=n * ratio)
                            .fold(State::zeros(d), |acc, k| acc + &dw[k])
                    },
                    seed,
                    false,
                )?;
                Ok((coarse.x0 - &reference).norm())
            })
            .collect()
    })?;
    let horizon = schedule.horizon();
    let hs = settings
        .grid_sizes
        .iter()
        .map(|&n| horizon / n as f64)
        .collect();
    Ok(ConvergenceStudy::new(hs, errors))
}

/// Dispatches to the study matching `method`: the Euler–Maruyama sampler
/// gets a strong-order study; every Heun-based sampler shares the ODE-leg
/// study.
pub fn convergence_order(
    method: SamplerMethod,
    model: &GaussianConditionalModel,
    schedule: &BridgeSchedule,
    y: &State,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceStudy> {
    match method {
        SamplerMethod::EmSde => em_sde_order_study(model, schedule, y, settings),
        _ => ode_leg_order_study(model, schedule, y, settings),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> State {
        State::from_column_slice(x)
    }

    #[test]
    fn fitted_order_of_exact_power_law() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powi(2)).collect();
        assert!((fitted_order(&hs, &errs).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fitted_order(&hs, &[0.0, 0.0, 0.0, 0.0]), None);
        assert_eq!(fitted_order(&hs[..1], &errs[..1]), None);
    }

    #[test]
    fn injected_linear_field_orders() {
        // x' = -x + sin-free linear test problem with exact solution e^{-t}
        let field = |x: &State, _: f64| -> Result<State> { Ok(-x) };
        let exact = v(&[(-1.0f64).exp()]);
        let steps = [10, 20, 40, 80, 160];
        let heun = field_order_study(&field, &v(&[1.0]), 0.0, 1.0, &steps, FieldIntegrator::Heun, &exact)
            .unwrap();
        let euler =
            field_order_study(&field, &v(&[1.0]), 0.0, 1.0, &steps, FieldIntegrator::Euler, &exact)
                .unwrap();
        let p = heun.order.unwrap();
        let q = euler.order.unwrap();
        assert!((1.9..=2.1).contains(&p), "heun {p}");
        assert!((0.9..=1.1).contains(&q), "euler {q}");
    }

    #[test]
    fn zero_field_has_zero_error() {
        let field = |x: &State, _: f64| -> Result<State> { Ok(x * 0.0) };
        let study =
            field_order_study(&field, &v(&[0.7]), 1.0, 0.0, &[4, 8, 16], FieldIntegrator::Heun, &v(&[0.7]))
                .unwrap();
        assert!(study.errors.iter().all(|e| *e == 0.0));
        assert_eq!(study.order, None);
    }

    #[test]
    fn reference_steps_must_nest() {
        let s = BridgeSchedule::brownian_bridge(1.0, 1.0).unwrap();
        let m = GaussianConditionalModel::isotropic(v(&[0.0]), 1.0).unwrap();
        let settings = ConvergenceSettings {
            grid_sizes: vec![16, 24],
            runs: 2,
            seed: 0,
            tau: 0.9,
            reference_steps: 16_384,
        };
        assert!(em_sde_order_study(&m, &s, &v(&[1.0]), &settings).is_err());
    }
}
