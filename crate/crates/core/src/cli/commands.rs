use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::config::Experiment;
use super::output::{ensure_dir, rows_to_csv, table_to_csv, write_file, ResultRow, RunSummary};
use super::{CliError, Command};
use crate::oracle::{ConditionalModel, OraclePredictor, State};
use crate::samplers::{RunSeed, SampleRun, SamplerConfig, SamplerMethod};
use crate::schedule::make_time_grid;
use crate::validation::{
    check_theorem1, check_theorem2, check_theorem3, em_sde_order_study, ode_leg_order_study,
    optimal_gaussian_projection, per_dimension_w1, sample_summary, ConvergenceSettings,
    StartKind, Theorem3Case, TheoremReport,
};

/// Tolerance of the start-step projection check.
const PROJECTION_TOL: f64 = 1e-8;

/// Files produced by one command, held in memory until written.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: RunSummary,
    /// Human-readable account of the run.
    pub report: String,
    pub failed_checks: usize,
}

impl CommandOutput {
    fn new(command: Command) -> Self {
        Self {
            files: Vec::new(),
            summary: RunSummary {
                command: command.name().into(),
                toolkit_version: env!("CARGO_PKG_VERSION").into(),
                ..RunSummary::default()
            },
            report: String::new(),
            failed_checks: 0,
        }
    }

    fn time<T>(&mut self, label: String, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.summary
            .wall_time_seconds
            .insert(label, start.elapsed().as_secs_f64());
        out
    }

    /// Writes every file plus `summary.json` into `dir`.
    pub fn write_to(&mut self, dir: &Path) -> Result<(), CliError> {
        self.summary.files = self.files.iter().map(|(n, _)| n.clone()).collect();
        self.summary.failed_checks = self.failed_checks;
        let json = serde_json::to_vec_pretty(&self.summary)?;
        ensure_dir(dir)?;
        for (name, bytes) in &self.files {
            write_file(dir, name, bytes)?;
        }
        write_file(dir, "summary.json", &json)
    }
}

pub fn run_command(command: Command, exp: &Experiment) -> Result<CommandOutput, CliError> {
    match command {
        Command::Validate => validate(exp),
        Command::Sample => sample(exp),
        Command::Compare => compare(exp),
        Command::Converge => converge(exp),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(";"))
}

fn verdict_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn theorem_rows(report: &TheoremReport, labels: &[String], seed: u64) -> Vec<ResultRow> {
    let (primary, secondary) = match report.theorem.name() {
        "T1" => ("error", None),
        "T2" => ("drift_norm", Some("drift_norm_times_c")),
        _ => ("kl_post", Some("kl_comparator")),
    };
    let row = |metric: String, value: f64| ResultRow {
        command: "validate",
        method: report.theorem.name().into(),
        n: None,
        nfe: None,
        seed,
        metric,
        value,
    };
    let mut rows = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        rows.push(row(format!("{primary}@{label}"), report.observed[i]));
        if let Some(name) = secondary {
            rows.push(row(format!("{name}@{label}"), report.auxiliary[i]));
        }
    }
    rows.push(row("verdict".into(), if report.passed() { 1.0 } else { 0.0 }));
    rows
}

fn validate(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let mut out = CommandOutput::new(Command::Validate);
    let v = &exp.config.validate;
    let seed = exp.config.sampler.seed;
    let (s, y, model) = (&exp.schedule, &exp.y, &exp.model);
    let mut rows = Vec::new();
    let mut text = String::new();

    let mut record = |out: &mut CommandOutput, report: &TheoremReport, labels: &[String], detail: String| {
        rows.extend(theorem_rows(report, labels, seed));
        let _ = write!(text, "{} {} {}", report.theorem.name(), verdict_word(report.passed()), detail);
        if let Some(note) = &report.note {
            let _ = write!(text, " [{note}]");
        }
        text.push('\n');
        if !report.passed() {
            out.failed_checks += 1;
        }
    };

    let t1 = out.time("T1".into(), || check_theorem1(model, s, y, &v.t1_epsilons))?;
    let labels: Vec<String> = t1.params.iter().map(|e| format!("eps={e}")).collect();
    let detail = format!(
        "final error {:.3e}, limit norm {:.6}",
        t1.observed.last().copied().unwrap_or(f64::NAN),
        t1.auxiliary[0]
    );
    record(&mut out, &t1, &labels, detail);

    let mut rng = RunSeed::new(seed, 0).rng();
    let t2 = out.time("T2".into(), || check_theorem2(model, s, y, &v.t2_epsilons, &mut rng))?;
    let labels: Vec<String> = t2.params.iter().map(|e| format!("eps={e}")).collect();
    let detail = format!(
        "drift norm {:.3e} -> {:.3e}",
        t2.observed[0],
        t2.observed.last().copied().unwrap_or(f64::NAN)
    );
    record(&mut out, &t2, &labels, detail);

    match model.as_gaussian() {
        Some(g) => {
            let conditions: Vec<State> = match &v.t3_conditions {
                Some(c) => c.iter().map(|y| State::from_column_slice(y)).collect(),
                None => (-2..=2).map(|k| y.add_scalar(k as f64)).collect(),
            };
            let mut cases = Vec::new();
            let mut labels = Vec::new();
            for c in &conditions {
                for &tau in &v.t3_taus {
                    labels.push(format!("y={},tau={tau}", fmt_vec(c.as_slice())));
                    cases.push(Theorem3Case {
                        schedule: *s,
                        y: c.clone(),
                        tau,
                    });
                }
            }
            let t3 = out.time("T3".into(), || check_theorem3(g, &cases, v.t3_comparator))?;
            let comparator = match v.t3_comparator {
                StartKind::Post => "post",
                StartKind::Em => "em",
            };
            let detail = format!("{} cases against the {comparator} start", cases.len());
            record(&mut out, &t3, &labels, detail);

            let mut ok = true;
            let mut worst = 0.0f64;
            for &tau in &v.t3_taus {
                let q = out.time(format!("projection/tau={tau}"), || {
                    optimal_gaussian_projection(g, s, y, tau)
                })?;
                let k = s.coeffs(tau)?;
                let target = y * k.a + g.prior_mean(y) * k.b;
                let mean_err = (&q.mean - target).amax();
                let std_err = (q.variance[0].sqrt() - k.c).abs();
                ok &= mean_err < PROJECTION_TOL && std_err < PROJECTION_TOL;
                worst = worst.max(mean_err).max(std_err);
                for (metric, value) in [("mean_error", mean_err), ("std_error", std_err)] {
                    rows.push(ResultRow {
                        command: "validate",
                        method: "projection".into(),
                        n: None,
                        nfe: None,
                        seed,
                        metric: format!("{metric}@tau={tau}"),
                        value,
                    });
                }
            }
            rows.push(ResultRow {
                command: "validate",
                method: "projection".into(),
                n: None,
                nfe: None,
                seed,
                metric: "verdict".into(),
                value: if ok { 1.0 } else { 0.0 },
            });
            let _ = writeln!(text, "projection {} worst error {worst:.3e}", verdict_word(ok));
            if !ok {
                out.failed_checks += 1;
            }
        }
        None => {
            text.push_str("T3 skipped: closed-form KL needs a gaussian model\n");
        }
    }

    out.files.push(("theorem_report.csv".into(), rows_to_csv(&rows)?));
    out.files.push(("summary.txt".into(), text.clone().into_bytes()));
    out.report = text;
    Ok(out)
}

fn sample(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let mut out = CommandOutput::new(Command::Sample);
    let cfg = &exp.config.sampler;
    let grid = make_time_grid(&exp.schedule, cfg.steps, cfg.spacing, cfg.t_min)?;
    let sampler = SamplerConfig {
        method: cfg.method,
        grid,
        record_trajectory: cfg.record_trajectory,
        seed: cfg.seed,
    };
    let predictor = OraclePredictor::new(&exp.model, &exp.schedule);
    let runs = out.time(cfg.method.name().into(), || {
        sampler.run_batch(&predictor, &exp.y, &exp.schedule, cfg.runs)
    })?;

    let d = exp.y.len();
    let mut header = vec!["run".to_string(), "dim".to_string()];
    header.extend((0..d).map(|i| format!("x0_{i}")));
    header.push("nfe".into());
    let records: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let mut rec = vec![r.seed.run.to_string(), d.to_string()];
            rec.extend(r.x0.iter().map(|x| x.to_string()));
            rec.push(r.nfe.to_string());
            rec
        })
        .collect();
    out.files.push(("samples.csv".into(), table_to_csv(&header, &records)?));

    if cfg.record_trajectory {
        let mut header = vec!["run".to_string(), "step".to_string(), "t".to_string()];
        header.extend((0..d).map(|i| format!("x_{i}")));
        let mut records = Vec::new();
        for r in &runs {
            for (step, (t, x)) in r.trajectory.iter().flatten().enumerate() {
                let mut rec = vec![r.seed.run.to_string(), step.to_string(), t.to_string()];
                rec.extend(x.iter().map(|v| v.to_string()));
                records.push(rec);
            }
        }
        out.files.push(("trajectories.csv".into(), table_to_csv(&header, &records)?));
    }

    out.report = format!(
        "{} runs of {} with N = {} (NFE {})\n",
        runs.len(),
        cfg.method.name(),
        cfg.steps,
        runs.first().map_or(0, |r| r.nfe)
    );
    Ok(out)
}

fn sorted_methods(methods: &[SamplerMethod]) -> Vec<SamplerMethod> {
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    m
}

fn sorted_sizes(sizes: &[usize]) -> Vec<usize> {
    let mut s = sizes.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn compare(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let mut out = CommandOutput::new(Command::Compare);
    let cfg = &exp.config.compare;
    let sampler = &exp.config.sampler;
    let (model, y) = (&exp.model, &exp.y);

    // reference draws use a stream no sampler run touches
    let mut rng = RunSeed::new(sampler.seed, u64::MAX).rng();
    let reference: Vec<State> = (0..cfg.runs).map(|_| model.sample_x0(y, &mut rng)).collect();
    let exact_mean = model.prior_mean(y);
    let exact_var = model.prior_variances(y);
    let predictor = OraclePredictor::new(model, &exp.schedule);

    let mut rows = Vec::new();
    let mut text = format!("{:<26} {:>5} {:>5} {:>12} {:>12} {:>10}\n", "method", "N", "NFE", "mean_err", "var_err", "W1");
    for method in sorted_methods(&cfg.methods) {
        for n in sorted_sizes(&cfg.grid_sizes) {
            let grid = make_time_grid(&exp.schedule, n, sampler.spacing, sampler.t_min)?;
            let config = SamplerConfig {
                method,
                grid,
                record_trajectory: false,
                seed: sampler.seed,
            };
            let runs: Vec<SampleRun> = out.time(format!("{}/N={n}", method.name()), || {
                config.run_batch(&predictor, y, &exp.schedule, cfg.runs)
            })?;
            let x0: Vec<State> = runs.into_iter().map(|r| r.x0).collect();
            let stats = sample_summary(&x0)?;
            let mean_err = (&stats.mean - &exact_mean).amax();
            let var_err = (&stats.variance - &exact_var).amax();
            let w1 = per_dimension_w1(&x0, &reference)?.into_iter().fold(0.0, f64::max);
            let nfe = method.expected_nfe(n);
            for (metric, value) in [("mean_error", mean_err), ("variance_error", var_err), ("w1", w1)] {
                rows.push(ResultRow {
                    command: "compare",
                    method: method.name().into(),
                    n: Some(n),
                    nfe: Some(nfe),
                    seed: sampler.seed,
                    metric: metric.into(),
                    value,
                });
            }
            let _ = writeln!(
                text,
                "{:<26} {n:>5} {nfe:>5} {mean_err:>12.4e} {var_err:>12.4e} {w1:>10.4}",
                method.name()
            );
        }
    }
    out.files.push(("comparison.csv".into(), rows_to_csv(&rows)?));
    out.report = text;
    Ok(out)
}

fn converge(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let mut out = CommandOutput::new(Command::Converge);
    let cfg = &exp.config.converge;
    let seed = exp.config.sampler.seed;
    let methods = sorted_methods(&cfg.methods);
    let gaussian = exp.model.as_gaussian();
    if gaussian.is_none() && methods.iter().any(|m| *m != SamplerMethod::EmSde) {
        return Err(CliError::Config(
            "ODE-leg convergence needs a gaussian model for its reference flow".into(),
        ));
    }
    let settings = ConvergenceSettings {
        grid_sizes: sorted_sizes(&cfg.grid_sizes),
        runs: cfg.runs,
        seed,
        tau: cfg.tau,
        reference_steps: cfg.reference_steps,
    };

    let mut rows = Vec::new();
    let mut text = String::new();
    for method in methods {
        let study = out.time(method.name().into(), || match (method, gaussian) {
            (SamplerMethod::EmSde, _) => {
                em_sde_order_study(&exp.model, &exp.schedule, &exp.y, &settings)
            }
            (_, Some(g)) => ode_leg_order_study(g, &exp.schedule, &exp.y, &settings),
            (_, None) => unreachable!("rejected above"),
        })?;
        let row = |n: Option<usize>, metric: &str, value: f64| ResultRow {
            command: "converge",
            method: method.name().into(),
            n,
            nfe: n.map(|n| method.expected_nfe(n)),
            seed,
            metric: metric.into(),
            value,
        };
        for (i, &n) in settings.grid_sizes.iter().enumerate() {
            rows.push(row(Some(n), "step_size", study.step_sizes[i]));
            rows.push(row(Some(n), "rms_error", study.errors[i]));
        }
        let order = study.order.unwrap_or(f64::NAN);
        rows.push(row(None, "order", order));
        let _ = writeln!(text, "{:<26} order {order:.3}", method.name());
    }
    out.files.push(("convergence.csv".into(), rows_to_csv(&rows)?));
    out.report = text;
    Ok(out)
}
