use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const CONFIG: &str = r#"
[schedule]
kind = "brownian_bridge"
sigma = 1.0

[model]
kind = "gaussian"
y = [2.0, 0.5]
mean = [0.5, -1.0]
variances = [1.0, 0.25]

[sampler]
method = "odes3"
steps = 20
seed = 3
runs = 8

[compare]
grid_sizes = [10, 20]
runs = 400

[converge]
grid_sizes = [16, 32, 64, 128]
runs = 32
reference_steps = 16384
"#;

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

fn workspace(config: &str) -> Workspace {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("experiment.toml");
    fs::write(&path, config).unwrap();
    Workspace { dir, config: path }
}

fn run(ws: &Workspace, command: &str, out: &str, extra: &[&str]) -> (i32, PathBuf, String) {
    let out = ws.dir.path().join(out);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bridgesampler"));
    cmd.arg(command).arg("--config").arg(&ws.config).arg("--out").arg(&out);
    for e in extra {
        cmd.arg("--set").arg(e);
    }
    let output = cmd.output().unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    (output.status.code().unwrap(), out, stdout)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn sample_reports_nfe_per_row() {
    let ws = workspace(CONFIG);
    let (code, out, _) = run(&ws, "sample", "a", &[]);
    assert_eq!(code, 0);
    let rows = read_csv(&out.join("samples.csv"));
    assert_eq!(rows[0], ["run", "dim", "x0_0", "x0_1", "nfe"]);
    assert_eq!(rows.len(), 9);
    assert!(rows[1..].iter().all(|r| r[4] == "38" && r[1] == "2"));

    let (_, out, _) = run(&ws, "sample", "b", &["sampler.steps=15"]);
    let rows = read_csv(&out.join("samples.csv"));
    assert!(rows[1..].iter().all(|r| r[4] == "28"));
}

#[test]
fn identical_invocations_give_identical_files() {
    let ws = workspace(CONFIG);
    for command in ["sample", "compare", "converge", "validate"] {
        let (c1, a, _) = run(&ws, command, &format!("{command}1"), &["sampler.record_trajectory=true"]);
        let (c2, b, _) = run(&ws, command, &format!("{command}2"), &["sampler.record_trajectory=true"]);
        assert_eq!((c1, c2), (0, 0));
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            if name.to_string_lossy().ends_with(".csv") {
                assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
            }
        }
    }
}

#[test]
fn deterministic_start_rows_are_identical() {
    let ws = workspace(CONFIG);
    let (code, out, _) = run(
        &ws,
        "sample",
        "d",
        &["sampler.method=deterministic_start_heun", "sampler.runs=100"],
    );
    assert_eq!(code, 0);
    let rows = read_csv(&out.join("samples.csv"));
    assert_eq!(rows.len(), 101);
    assert!(rows[2..].iter().all(|r| r[2..] == rows[1][2..]));
}

#[test]
fn trajectories_start_at_condition() {
    let ws = workspace(CONFIG);
    let (code, out, _) = run(&ws, "sample", "t", &["sampler.record_trajectory=true", "sampler.runs=2"]);
    assert_eq!(code, 0);
    let rows = read_csv(&out.join("trajectories.csv"));
    assert_eq!(rows[0], ["run", "step", "t", "x_0", "x_1"]);
    assert_eq!(rows[1], ["0", "0", "1", "2", "0.5"]);
    // T, then N knots down to 0
    assert_eq!(rows.len() - 1, 2 * 21);
    assert_eq!(rows[21][2], "0");
}

#[test]
fn malformed_config_writes_nothing() {
    let ws = workspace("[schedule]\nkind = \"brownian_bridge\"\nsigma = \n");
    let (code, out, _) = run(&ws, "validate", "m", &[]);
    assert_eq!(code, 2);
    assert!(!out.exists());

    let ws = workspace(CONFIG);
    for bad in ["sampler.stepz=3", "schedule.sigma=-1", "sampler.steps=1", "model.y=[1.0]"] {
        let (code, out, _) = run(&ws, "sample", "u", &[bad]);
        assert_eq!(code, 2, "{bad}");
        assert!(!out.exists());
    }
}

#[test]
fn validate_passes_and_reports() {
    let ws = workspace(CONFIG);
    let (code, out, stdout) = run(&ws, "validate", "v", &[]);
    assert_eq!(code, 0, "{stdout}");
    for t in ["T1 PASS", "T2 PASS", "T3 PASS", "projection PASS"] {
        assert!(stdout.contains(t), "{stdout}");
    }
    let rows = read_csv(&out.join("theorem_report.csv"));
    assert_eq!(rows[0], ["command", "method", "N", "nfe", "seed", "metric", "value"]);
    let verdicts: Vec<_> = rows.iter().filter(|r| r[5] == "verdict").collect();
    assert_eq!(verdicts.len(), 4);
    assert!(verdicts.iter().all(|r| r[6].parse::<f64>().unwrap() == 1.0));
    assert_eq!(fs::read_to_string(out.join("summary.txt")).unwrap(), stdout);
}

#[test]
fn post_comparator_passes_with_note() {
    let ws = workspace(CONFIG);
    let (code, _, stdout) = run(&ws, "validate", "p", &["validate.t3_comparator=post"]);
    assert_eq!(code, 0);
    let line = stdout.lines().find(|l| l.starts_with("T3")).unwrap();
    assert!(line.contains("PASS") && line.contains("equality"), "{line}");
}

#[test]
fn failing_check_exits_one_and_still_reports() {
    let ws = workspace(CONFIG);
    // a sweep shorter than four decades cannot establish the blow-up
    let (code, out, stdout) = run(&ws, "validate", "f", &["validate.t2_epsilons=[1e-2, 1e-3]"]);
    assert_eq!(code, 1);
    assert!(stdout.contains("T2 FAIL"));
    assert!(out.join("theorem_report.csv").exists());
}

#[test]
fn compare_rows_are_ordered_and_deterministic_start_collapses() {
    let ws = workspace(CONFIG);
    let (code, out, _) = run(&ws, "compare", "c", &[]);
    assert_eq!(code, 0);
    let rows = read_csv(&out.join("comparison.csv"));
    let keys: Vec<(String, String)> = rows[1..].iter().map(|r| (r[1].clone(), r[2].clone())).collect();
    let methods = ["odes3", "em_sde", "em_start_heun", "deterministic_start_heun"];
    let expected: Vec<(String, String)> = methods
        .iter()
        .flat_map(|m| ["10", "20"].into_iter().flat_map(move |n| std::iter::repeat_n((m.to_string(), n.to_string()), 3)))
        .collect();
    assert_eq!(keys, expected);
    for r in &rows[1..] {
        if r[1] == "deterministic_start_heun" && r[5] == "variance_error" {
            // the largest target variance is 1
            let v: f64 = r[6].parse().unwrap();
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
        if r[1] == "odes3" {
            let n: u64 = r[2].parse().unwrap();
            assert_eq!(r[3], (2 * n - 2).to_string());
        }
    }
}

#[test]
fn converge_emits_orders() {
    let ws = workspace(CONFIG);
    let (code, out, stdout) = run(&ws, "converge", "g", &[]);
    assert_eq!(code, 0);
    let rows = read_csv(&out.join("convergence.csv"));
    let orders: Vec<&Vec<String>> = rows.iter().filter(|r| r[5] == "order").collect();
    assert_eq!(orders.len(), 2);
    assert!(orders.iter().all(|r| r[2].is_empty() && r[6].parse::<f64>().unwrap() > 0.5));
    assert!(stdout.contains("odes3") && stdout.contains("em_sde"));
}

#[test]
fn summary_records_hash_and_version() {
    let ws = workspace(CONFIG);
    let (_, a, _) = run(&ws, "sample", "h1", &[]);
    let (_, b, _) = run(&ws, "sample", "h2", &["sampler.seed=4"]);
    let (_, c, _) = run(&ws, "sample", "h3", &[]);
    let read = |p: &Path| -> serde_json::Value {
        serde_json::from_slice(&fs::read(p.join("summary.json")).unwrap()).unwrap()
    };
    let (sa, sb, sc) = (read(&a), read(&b), read(&c));
    assert_eq!(sa["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(sa["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(sa["config_sha256"], sc["config_sha256"]);
    assert_ne!(sa["config_sha256"], sb["config_sha256"]);
    assert_eq!(sa["files"], serde_json::json!(["samples.csv"]));
}
