//! TOML experiment files with dotted `--set` overrides.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::CliError;
use crate::oracle::{
    AffineMap, ConditionalDataModel, GaussianConditionalModel, GaussianMixtureConditionalModel,
    State,
};
use crate::samplers::SamplerMethod;
use crate::schedule::{make_time_grid, BridgeSchedule, ScheduleKind, Spacing};
use crate::validation::StartKind;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    BrownianBridge {
        sigma: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    VariancePreserving {
        beta_min: f64,
        beta_max: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<BridgeSchedule, CliError> {
        let (kind, horizon) = match *self {
            ScheduleSpec::BrownianBridge { sigma, horizon } => {
                (ScheduleKind::BrownianBridge { sigma }, horizon)
            }
            ScheduleSpec::VariancePreserving {
                beta_min,
                beta_max,
                horizon,
            } => (ScheduleKind::VariancePreserving { beta_min, beta_max }, horizon),
        };
        Ok(BridgeSchedule::new(kind, horizon)?)
    }
}

/// Conditional data law `q_data(x0 | y)` and the condition `y` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `N(matrix y + mean, diag(variances))`; `matrix` defaults to zero.
    Gaussian {
        y: Vec<f64>,
        mean: Vec<f64>,
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
        variances: Vec<f64>,
    },
    /// Mixture of `N(means[k], diag(variances))` with the given weights.
    Mixture {
        y: Vec<f64>,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    },
}

impl ModelSpec {
    pub fn y(&self) -> State {
        match self {
            ModelSpec::Gaussian { y, .. } | ModelSpec::Mixture { y, .. } => {
                State::from_column_slice(y)
            }
        }
    }

    pub fn build(&self) -> Result<ConditionalDataModel, CliError> {
        let model = match self {
            ModelSpec::Gaussian {
                mean,
                matrix,
                variances,
                ..
            } => {
                let offset = State::from_column_slice(mean);
                let map = match matrix {
                    None => AffineMap::constant(offset),
                    Some(rows) => {
                        let d = mean.len();
                        if rows.iter().any(|r| r.len() != d) {
                            return Err(CliError::Config(format!("model.matrix rows must have length {d}")));
                        }
                        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
                        AffineMap::new(m, offset)?
                    }
                };
                if variances.len() != mean.len() {
                    return Err(CliError::Config("model.variances and model.mean differ in length".into()));
                }
                ConditionalDataModel::Gaussian(GaussianConditionalModel::new(
                    map,
                    State::from_column_slice(variances),
                )?)
            }
            ModelSpec::Mixture {
                weights,
                means,
                variances,
                ..
            } => {
                let comps = means
                    .iter()
                    .map(|m| AffineMap::constant(State::from_column_slice(m)))
                    .collect();
                ConditionalDataModel::Mixture(GaussianMixtureConditionalModel::new(
                    weights.clone(),
                    comps,
                    State::from_column_slice(variances),
                )?)
            }
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub method: SamplerMethod,
    /// Grid size `N`.
    pub steps: usize,
    pub spacing: Spacing,
    pub t_min: f64,
    pub seed: u64,
    pub runs: usize,
    pub record_trajectory: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            method: SamplerMethod::Odes3,
            steps: 20,
            spacing: Spacing::Uniform,
            t_min: 0.0,
            seed: 0,
            runs: 1,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub t1_epsilons: Vec<f64>,
    pub t2_epsilons: Vec<f64>,
    pub t3_taus: Vec<f64>,
    /// Conditions for the start-step comparison; defaults to `y + k` for
    /// `k` in `-2..=2`.
    pub t3_conditions: Option<Vec<Vec<f64>>>,
    /// Start law compared against the posterior start.
    pub t3_comparator: StartKind,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            t1_epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5],
            t2_epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            t3_taus: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            t3_conditions: None,
            t3_comparator: StartKind::Em,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub methods: Vec<SamplerMethod>,
    pub grid_sizes: Vec<usize>,
    pub runs: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            methods: SamplerMethod::ALL.to_vec(),
            grid_sizes: vec![5, 10, 20, 40],
            runs: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub methods: Vec<SamplerMethod>,
    pub grid_sizes: Vec<usize>,
    pub runs: usize,
    /// Fixed start of the ODE leg for Heun-based methods.
    pub tau: f64,
    pub reference_steps: usize,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            methods: vec![SamplerMethod::Odes3, SamplerMethod::EmSde],
            grid_sizes: vec![16, 32, 64, 128],
            runs: 32,
            tau: 0.9,
            reference_steps: 16_384,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub converge: ConvergeSection,
}

/// A configuration that has passed every static check.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub schedule: BridgeSchedule,
    pub model: ConditionalDataModel,
    pub y: State,
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig) -> Result<Self, CliError> {
        let schedule = config.schedule.build()?;
        let model = config.model.build()?;
        let y = config.model.y();
        use crate::oracle::ConditionalModel;
        if y.len() != model.dim() {
            return Err(CliError::Config(format!(
                "model.y has length {}, model dimension is {}",
                y.len(),
                model.dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("model.y must be finite".into()));
        }

        let s = &config.sampler;
        if s.runs == 0 {
            return Err(CliError::Config("sampler.runs must be >= 1".into()));
        }
        make_time_grid(&schedule, s.steps, s.spacing, s.t_min)?;

        let c = &config.compare;
        if c.methods.is_empty() || c.grid_sizes.is_empty() {
            return Err(CliError::Config("compare needs methods and grid_sizes".into()));
        }
        if c.runs < 2 {
            return Err(CliError::Config("compare.runs must be >= 2".into()));
        }
        for &n in &c.grid_sizes {
            make_time_grid(&schedule, n, s.spacing, s.t_min)?;
        }

        let v = &config.validate;
        if let Some(conds) = &v.t3_conditions {
            if conds.is_empty() || conds.iter().any(|c| c.len() != y.len()) {
                return Err(CliError::Config(format!(
                    "validate.t3_conditions must be non-empty vectors of length {}",
                    y.len()
                )));
            }
        }
        if v.t3_taus.is_empty() || v.t3_taus.iter().any(|t| !(*t > 0.0 && *t < schedule.horizon())) {
            return Err(CliError::Config("validate.t3_taus must lie inside (0, T)".into()));
        }

        let g = &config.converge;
        if g.methods.is_empty() || g.grid_sizes.len() < 2 || g.runs == 0 {
            return Err(CliError::Config(
                "converge needs methods, at least two grid sizes and runs >= 1".into(),
            ));
        }
        if g.grid_sizes.iter().any(|&n| n < 2) {
            return Err(CliError::Config("converge.grid_sizes must be >= 2".into()));
        }
        Ok(Self {
            config,
            schedule,
            model,
            y,
        })
    }
}

/// Sets the leaf at dotted `path` to `value`, creating tables on the way.
/// The value is parsed as a TOML literal and falls back to a bare string.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{path}`")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has key v"),
        Err(_) => Value::String(raw.to_string()),
    };
    let (leaf, parents) = keys.split_last().expect("keys is non-empty");
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path `{path}`: `{key}` is not a table")))?;
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// Reads, overrides and validates a config. Also returns the SHA-256 of the
/// effective configuration in canonical TOML form.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<(Experiment, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut table: Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let canonical = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    let config: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    Ok((Experiment::from_config(config)?, hash))
}
