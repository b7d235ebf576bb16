//! Analytic conditional data laws `q_data(X0 | y)`.
//!
//! Each model knows its exact posterior mean `E[X0 | X_t, y]` under the bridge
//! kernel, so it doubles as a perfectly trained data predictor.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, BridgeError, Result};
use crate::schedule::{BridgeCoeffs, BridgeSchedule};

pub type State = DVector<f64>;

/// Vector of independent standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> State {
    State::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// `y ↦ A y + u`, with `A = 0` when no matrix is given.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: Option<DMatrix<f64>>,
    pub offset: State,
}

impl AffineMap {
    pub fn constant(offset: State) -> Self {
        Self { matrix: None, offset }
    }

    pub fn new(matrix: DMatrix<f64>, offset: State) -> Result<Self> {
        let d = offset.len();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(BridgeError::Config(format!(
                "mean matrix must be {d}x{d}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self {
            matrix: Some(matrix),
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, y: &State) -> State {
        match &self.matrix {
            Some(m) => m * y + &self.offset,
            None => self.offset.clone(),
        }
    }
}

/// The data-predictor contract `D(X_t, y, t) -> X̂0`.
pub trait DataPredictor: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, x_t: &State, y: &State, t: f64) -> Result<State>;
}

impl<P: DataPredictor + ?Sized> DataPredictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict(&self, x_t: &State, y: &State, t: f64) -> Result<State> {
        (**self).predict(x_t, y, t)
    }
}

/// Wraps a predictor and counts evaluations (NFE).
#[derive(Debug)]
pub struct CountingPredictor<P> {
    inner: P,
    calls: AtomicU64,
}

impl<P: DataPredictor> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn nfe(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<P: DataPredictor> DataPredictor for CountingPredictor<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn predict(&self, x_t: &State, y: &State, t: f64) -> Result<State> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(x_t, y, t)
    }
}

/// Conditional law with closed-form Bayesian quantities.
pub trait ConditionalModel: Sync {
    fn dim(&self) -> usize;

    /// `E[X0 | y]`.
    fn prior_mean(&self, y: &State) -> State;

    /// Exact draw from `q_data(· | y)`.
    fn sample_x0(&self, y: &State, rng: &mut dyn rand::RngCore) -> State;

    /// `E[X0 | X_t = x_t, y]`.
    fn posterior_mean(
        &self,
        x_t: &State,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<State>;

    /// `∇ log q_t(x_t | y)` of the exact marginal, defined for `0 < t < T`.
    fn marginal_score(
        &self,
        x_t: &State,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<State>;
}

/// Binds a model to a schedule so it can serve as a [`DataPredictor`].
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor<'a, M: ?Sized> {
    pub model: &'a M,
    pub schedule: &'a BridgeSchedule,
}

impl<'a, M: ConditionalModel + ?Sized> OraclePredictor<'a, M> {
    pub fn new(model: &'a M, schedule: &'a BridgeSchedule) -> Self {
        Self { model, schedule }
    }
}

impl<M: ConditionalModel + ?Sized> DataPredictor for OraclePredictor<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn predict(&self, x_t: &State, y: &State, t: f64) -> Result<State> {
        self.model.posterior_mean(x_t, y, t, self.schedule)
    }
}

/// Draws `X_t = a_t y + b_t x0 + c_t z`.
pub fn forward_sample<R: Rng + ?Sized>(
    schedule: &BridgeSchedule,
    x0: &State,
    y: &State,
    t: f64,
    rng: &mut R,
) -> Result<State> {
    let z = standard_normal(x0.len(), rng);
    forward_sample_with_noise(schedule, x0, y, t, &z)
}

/// [`forward_sample`] with the standard normal draw supplied by the caller.
pub fn forward_sample_with_noise(
    schedule: &BridgeSchedule,
    x0: &State,
    y: &State,
    t: f64,
    z: &State,
) -> Result<State> {
    check_dim(x0.len(), y.len())?;
    check_dim(x0.len(), z.len())?;
    let k = schedule.coeffs(t)?;
    Ok(y * k.a + x0 * k.b + z * k.c)
}

fn endpoint_prior(x_t: &State, y: &State, prior: impl FnOnce() -> State) -> Result<State> {
    if x_t == y {
        Ok(prior())
    } else {
        Err(BridgeError::Domain(
            "at t = T the bridge kernel is a point mass at y; x_t must equal y".into(),
        ))
    }
}

/// Conjugate update for one coordinate, scaled by `c²` so it stays finite as
/// `c -> 0`.
fn conjugate_mean(k: &BridgeCoeffs, prior_mean: f64, prior_var: f64, residual: f64) -> f64 {
    (k.c2 * prior_mean / prior_var + k.b * residual) / (k.c2 / prior_var + k.b * k.b)
}

/// `q_data(X0 | y) = N(A y + u, diag(variances))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditionalModel {
    mean: AffineMap,
    variances: State,
}

impl GaussianConditionalModel {
    pub fn new(mean: AffineMap, variances: State) -> Result<Self> {
        check_dim(mean.dim(), variances.len())?;
        if mean.dim() == 0 {
            return Err(BridgeError::Config("model dimension must be positive".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(BridgeError::Config("all variances must be finite and > 0".into()));
        }
        Ok(Self { mean, variances })
    }

    /// Isotropic model with a constant mean.
    pub fn isotropic(mean: State, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(AffineMap::constant(mean), State::from_element(d, variance))
    }

    pub fn variances(&self) -> &State {
        &self.variances
    }

    pub fn mean_map(&self) -> &AffineMap {
        &self.mean
    }

    /// Mean and per-dimension variance of the exact marginal
    /// `q_t(· | y) = N(a y + b mu0, c² + b² var0)`.
    pub fn marginal_moments(
        &self,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<(State, State)> {
        check_dim(self.dim(), y.len())?;
        let k = schedule.coeffs(t)?;
        let mu0 = self.mean.apply(y);
        let mean = y * k.a + mu0 * k.b;
        let var = self.variances.map(|v| k.c2 + k.b * k.b * v);
        Ok((mean, var))
    }
}

impl ConditionalModel for GaussianConditionalModel {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn prior_mean(&self, y: &State) -> State {
        self.mean.apply(y)
    }

    fn sample_x0(&self, y: &State, rng: &mut dyn rand::RngCore) -> State {
        let z = standard_normal(self.dim(), rng);
        self.mean.apply(y) + z.zip_map(&self.variances, |z, v| z * v.sqrt())
    }

    fn posterior_mean(
        &self,
        x_t: &State,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<State> {
        check_dim(self.dim(), x_t.len())?;
        check_dim(self.dim(), y.len())?;
        let k = schedule.coeffs(t)?;
        let mu0 = self.mean.apply(y);
        if k.b == 0.0 {
            return endpoint_prior(x_t, y, || mu0);
        }
        Ok(State::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                conjugate_mean(&k, mu0[i], self.variances[i], x_t[i] - k.a * y[i])
            }),
        ))
    }

    fn marginal_score(
        &self,
        x_t: &State,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<State> {
        check_dim(self.dim(), x_t.len())?;
        let k = schedule.coeffs(t)?;
        if k.c2 == 0.0 {
            return Err(BridgeError::SingularTime {
                t,
                what: "marginal score needs 0 < t < T",
            });
        }
        let (mean, var) = self.marginal_moments(y, t, schedule)?;
        Ok((&mean - x_t).component_div(&var))
    }
}

/// Weighted mixture of Gaussians sharing one diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureConditionalModel {
    weights: Vec<f64>,
    components: Vec<AffineMap>,
    variances: State,
}

impl GaussianMixtureConditionalModel {
    /// Weights must be non-negative and sum to one within `1e-12`.
    pub fn new(weights: Vec<f64>, components: Vec<AffineMap>, variances: State) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(BridgeError::Config(format!(
                "need one weight per component, got {} weights and {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(BridgeError::Config("mixture weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BridgeError::Config(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let d = variances.len();
        if d == 0 {
            return Err(BridgeError::Config("model dimension must be positive".into()));
        }
        for c in &components {
            check_dim(d, c.dim())?;
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(BridgeError::Config("all variances must be finite and > 0".into()));
        }
        Ok(Self {
            weights,
            components,
            variances,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Var[X0 | y]` per coordinate.
    pub fn prior_variances(&self, y: &State) -> State {
        let mean = self.prior_mean(y);
        let mut second = self.variances.clone();
        for (w, c) in self.weights.iter().zip(&self.components) {
            second += c.apply(y).map(|m| w * m * m);
        }
        second - mean.map(|m| m * m)
    }

    /// Normalized component responsibilities given `x_t`, via log-sum-exp.
    fn responsibilities(&self, x_t: &State, y: &State, k: &BridgeCoeffs) -> Vec<f64> {
        let var = self.variances.map(|v| k.c2 + k.b * k.b * v);
        let log_terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(comp, w)| {
                let m = comp.apply(y);
                let quad: f64 = (0..self.dim())
                    .map(|i| {
                        let r = x_t[i] - k.a * y[i] - k.b * m[i];
                        r * r / var[i]
                    })
                    .sum();
                w.ln() - 0.5 * quad
            })
            .collect();
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        unnorm.into_iter().map(|u| u / z).collect()
    }
}

impl ConditionalModel for GaussianMixtureConditionalModel {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn prior_mean(&self, y: &State) -> State {
        self.components
            .iter()
            .zip(&self.weights)
            .fold(State::zeros(self.dim()), |acc, (c, w)| acc + c.apply(y) * *w)
    }

    fn sample_x0(&self, y: &State, rng: &mut dyn rand::RngCore) -> State {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        // guard against rounding in the cumulative sum landing on a zero weight
        while self.weights[pick] == 0.0 {
            pick -= 1;
        }
        let z = standard_normal(self.dim(), rng);
        self.components[pick].apply(y) + z.zip_map(&self.variances, |z, v| z * v.sqrt())
    }

    fn posterior_mean(
        &self,
        x_t: &State,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<State> {
        check_dim(self.dim(), x_t.len())?;
        check_dim(self.dim(), y.len())?;
        let k = schedule.coeffs(t)?;
        if k.b == 0.0 {
            return endpoint_prior(x_t, y, || self.prior_mean(y));
        }
        let resp = self.responsibilities(x_t, y, &k);
        let mut out = State::zeros(self.dim());
        for (comp, r) in self.components.iter().zip(resp) {
            if r == 0.0 {
                continue;
            }
            let m = comp.apply(y);
            for i in 0..self.dim() {
                out[i] += r * conjugate_mean(&k, m[i], self.variances[i], x_t[i] - k.a * y[i]);
            }
        }
        Ok(out)
    }

    fn marginal_score(
        &self,
        x_t: &State,
        y: &State,
        t: f64,
        schedule: &BridgeSchedule,
    ) -> Result<State> {
        check_dim(self.dim(), x_t.len())?;
        check_dim(self.dim(), y.len())?;
        let k = schedule.coeffs(t)?;
        if k.c2 == 0.0 {
            return Err(BridgeError::SingularTime {
                t,
                what: "marginal score needs 0 < t < T",
            });
        }
        let var = self.variances.map(|v| k.c2 + k.b * k.b * v);
        let resp = self.responsibilities(x_t, y, &k);
        let mut out = State::zeros(self.dim());
        for (comp, r) in self.components.iter().zip(resp) {
            let m = comp.apply(y);
            for i in 0..self.dim() {
                out[i] -= r * (x_t[i] - k.a * y[i] - k.b * m[i]) / var[i];
            }
        }
        Ok(out)
    }
}

/// Either oracle family, as loaded from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionalDataModel {
    Gaussian(GaussianConditionalModel),
    Mixture(GaussianMixtureConditionalModel),
}

impl ConditionalDataModel {
    pub fn as_gaussian(&self) -> Option<&GaussianConditionalModel> {
        match self {
            Self::Gaussian(g) => Some(g),
            Self::Mixture(_) => None,
        }
    }

    /// `Var[X0 | y]` per coordinate.
    pub fn prior_variances(&self, y: &State) -> State {
        match self {
            Self::Gaussian(g) => g.variances().clone(),
            Self::Mixture(m) => m.prior_variances(y),
        }
    }

    fn inner(&self) -> &dyn ConditionalModel {
        match self {
            Self::Gaussian(g) => g,
            Self::Mixture(m) => m,
        }
    }
}

impl ConditionalModel for ConditionalDataModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn prior_mean(&self, y: &State) -> State {
        self.inner().prior_mean(y)
    }

    fn sample_x0(&self, y: &State, rng: &mut dyn rand::RngCore) -> State {
        self.inner().sample_x0(y, rng)
    }

    fn posterior_mean(&self, x_t: &State, y: &State, t: f64, s: &BridgeSchedule) -> Result<State> {
        self.inner().posterior_mean(x_t, y, t, s)
    }

    fn marginal_score(&self, x_t: &State, y: &State, t: f64, s: &BridgeSchedule) -> Result<State> {
        self.inner().marginal_score(x_t, y, t, s)
    }
}
