use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_impulse-periodic");

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_with(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    run(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn edited_config(dir: &Path, base: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = json(&example(base));
    edit(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

struct Row {
    t: f64,
    x: f64,
    x_right: Option<f64>,
}

fn read_rows(path: &Path) -> Vec<Row> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            Row {
                t: r[0].parse().unwrap(),
                x: r[1].parse().unwrap(),
                x_right: if r[2].is_empty() { None } else { Some(r[2].parse().unwrap()) },
            }
        })
        .collect()
}

fn sweep_rows(path: &Path) -> Vec<(f64, f64, bool)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn check_worked_example_passes() {
    let tmp = TempDir::new().unwrap();
    let o = run_with("check", &example("paper_sec4.json"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("report.json"));
    let h = &r["hypothesis_report"];
    assert!((h["D"].as_f64().unwrap() - 27.0).abs() < 1e-9);
    assert_eq!(h["h2"]["status"], "MARGINAL");
    assert_eq!(h["h3"]["pass"], true);
    assert_eq!(h["h4"]["pass"], true);
    assert_eq!(h["degree"]["degree"], 1);
}

#[test]
fn check_large_neutral_coefficient_fails_h3() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_config(tmp.path(), "paper_sec4.json", |v| v["problem"]["B"] = Value::from(2.0));
    let o = run_with("check", &cfg, tmp.path(), &[]);
    assert_eq!(code(&o), 1);
    let r = json(&tmp.path().join("report.json"));
    assert_eq!(r["hypothesis_report"]["h3"]["pass"], false);
}

#[test]
fn invalid_inputs_exit_two() {
    let tmp = TempDir::new().unwrap();
    let neg = edited_config(tmp.path(), "paper_sec4.json", |v| v["problem"]["d"] = Value::from(-1.0));
    assert_eq!(code(&run_with("check", &neg, tmp.path(), &[])), 2);

    let unknown = edited_config(tmp.path(), "paper_sec4.json", |v| v["solver"]["grid_size"] = Value::from(10));
    assert_eq!(code(&run_with("check", &unknown, tmp.path(), &[])), 2);

    let missing = tmp.path().join("absent.json");
    assert_eq!(code(&run_with("check", &missing, tmp.path(), &[])), 2);

    assert_eq!(code(&run(&["solve"])), 2);
}

#[test]
fn solve_worked_example_gives_zero() {
    let tmp = TempDir::new().unwrap();
    let o = run_with("solve", &example("paper_sec4.json"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&tmp.path().join("solution_x.csv"));
    assert!(rows.len() > 2048);
    assert!(rows.iter().all(|r| r.x == 0.0 && r.x_right.unwrap_or(0.0) == 0.0));
    let cert = json(&tmp.path().join("certificate.json"));
    assert_eq!(cert["status"], "CONVERGED");
    assert_eq!(cert["certification"], "CERTIFIED");
    assert_eq!(cert["sup_norm"], 0.0);
    let report = json(&tmp.path().join("report.json"));
    for key in ["problem_echo", "hypothesis_report", "certificate"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn solve_shifted_matches_fixture() {
    let tmp = TempDir::new().unwrap();
    let o = run_with("solve", &example("shifted_sec4.json"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fx = json(&fixture("shifted_sec4.json"));
    let cert = json(&tmp.path().join("certificate.json"));
    let c = cert["kernel_constant"].as_f64().unwrap();
    assert!((c - fx["kernel_constant"].as_f64().unwrap()).abs() < 5e-3);
    assert!((cert["sup_norm"].as_f64().unwrap() - fx["sup_norm"].as_f64().unwrap()).abs() < 5e-3);
    assert_eq!(cert["certification"], "CERTIFIED");

    let rows = read_rows(&tmp.path().join("solution_u.csv"));
    let rows: Vec<&Row> = rows.iter().filter(|r| r.t >= 0.0).collect();
    let marks: Vec<f64> = rows.iter().filter(|r| r.x_right.is_some()).map(|r| r.t).collect();
    let ts = fx["t"].as_array().unwrap();
    let us = fx["u"].as_array().unwrap();
    let mut compared = 0;
    for (t, u) in ts.iter().zip(us) {
        let (t, u) = (t.as_f64().unwrap(), u.as_f64().unwrap());
        if marks.iter().any(|m| (m - t).abs() < 1e-2) {
            continue;
        }
        let i = rows.partition_point(|r| r.t <= t).clamp(1, rows.len() - 1);
        let (a, b) = (rows[i - 1], rows[i]);
        let left = a.x_right.unwrap_or(a.x);
        let w = (t - a.t) / (b.t - a.t);
        let v = left + w * (b.x - left);
        assert!((v - u).abs() < 5e-3, "t = {t}: {v} vs {u}");
        compared += 1;
    }
    assert!(compared > 200);
}

#[test]
fn force_marks_uncertified() {
    let tmp = TempDir::new().unwrap();
    let cfg = example("linear_closed_form.json");
    assert_eq!(code(&run_with("solve", &cfg, tmp.path(), &["--grid", "512"])), 1);
    let o = run_with("solve", &cfg, tmp.path(), &["--grid", "512", "--force"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cert = json(&tmp.path().join("certificate.json"));
    assert_eq!(cert["certification"], "UNCERTIFIED");
}

#[test]
fn verify_round_trip_and_corruption() {
    let tmp = TempDir::new().unwrap();
    let cfg = example("shifted_sec4.json");
    let sol = tmp.path().join("solve");
    assert_eq!(code(&run_with("solve", &cfg, &sol, &[])), 0);
    let traj = sol.join("solution_x.csv");
    let o = run_with("verify", &cfg, &tmp.path().join("v"), &["--trajectory", traj.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("v/report.json"));
    assert_eq!(r["verification"]["within_tolerances"], true);

    let body = fs::read_to_string(&traj).unwrap();
    let mut corrupted = String::new();
    let mut hit = false;
    for (i, line) in body.lines().enumerate() {
        let mut cols: Vec<String> = line.split(',').map(str::to_owned).collect();
        if i > 0 && cols[0].parse::<f64>().unwrap() == 1.0 {
            let xr: f64 = cols[2].parse().unwrap();
            cols[2] = (xr + 0.5).to_string();
            hit = true;
        }
        corrupted.push_str(&cols.join(","));
        corrupted.push('\n');
    }
    assert!(hit);
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, corrupted).unwrap();
    let o = run_with("verify", &cfg, &tmp.path().join("v2"), &["--trajectory", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let schema = tmp.path().join("schema.csv");
    fs::write(&schema, "time,value\n0,1\n").unwrap();
    let o = run_with("verify", &cfg, &tmp.path().join("v3"), &["--trajectory", schema.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_residual_shrinks_with_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = example("shifted_sec4.json");
    let mut residuals = Vec::new();
    for n in ["512", "1024"] {
        let sol = tmp.path().join(format!("s{n}"));
        assert_eq!(code(&run_with("solve", &cfg, &sol, &["--grid", n])), 0);
        let traj = sol.join("solution_x.csv");
        let v = tmp.path().join(format!("v{n}"));
        assert_eq!(code(&run_with("verify", &cfg, &v, &["--trajectory", traj.to_str().unwrap()])), 0);
        let r = json(&v.join("report.json"));
        residuals.push(r["verification"]["residuals"]["max_ode_residual"].as_f64().unwrap());
    }
    assert!(residuals[1] < residuals[0], "{residuals:?}");
}

#[test]
fn sweep_worked_example_is_zero() {
    let tmp = TempDir::new().unwrap();
    let schedule: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let cfg = edited_config(tmp.path(), "paper_sec4.json", |v| {
        v["solver"]["lambda_schedule"] = Value::from(schedule.clone());
        v["solver"]["N"] = Value::from(512);
    });
    let out = tmp.path().join("out");
    let o = run_with("sweep", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sweep_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 10);
    for ((l, sup, conv), expect) in rows.iter().zip(&schedule) {
        assert_eq!(l, expect);
        assert_eq!(*sup, 0.0);
        assert!(conv);
    }
}

#[test]
fn sweep_linear_matches_closed_form() {
    let tmp = TempDir::new().unwrap();
    let o = run_with("sweep", &example("linear_closed_form.json"), tmp.path(), &["--force"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sweep_rows(&tmp.path().join("sweep.csv"));
    assert_eq!(rows.len(), 10);
    for (l, sup, conv) in rows {
        assert!(conv);
        let exact = l / (1.0 + l * l).sqrt();
        assert!((sup - exact).abs() < 1e-5, "lambda {l}: {sup} vs {exact}");
    }
}

#[test]
fn sweep_single_lambda_single_thread() {
    let tmp = TempDir::new().unwrap();
    let cfg = edited_config(tmp.path(), "shifted_sec4.json", |v| {
        v["solver"]["lambda_schedule"] = Value::from(vec![0.5]);
        v["solver"]["N"] = Value::from(256);
    });
    let out = tmp.path().join("out");
    let o = Command::new(BIN)
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
        .env("IMPULSE_PERIODIC_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sweep_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, 0.5);
    assert!(rows[0].2);
}

#[test]
fn reports_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = example("shifted_sec4.json");
    let mut reports = Vec::new();
    let mut csvs = Vec::new();
    for run_id in ["a", "b"] {
        let out = tmp.path().join(run_id);
        assert_eq!(code(&run_with("solve", &cfg, &out, &["--grid", "512"])), 0);
        let mut r = json(&out.join("report.json"));
        r.as_object_mut().unwrap().remove("timestamp_unix");
        reports.push(r);
        csvs.push(fs::read(out.join("solution_x.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn regen_reproduces_fixtures() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["testkit", "regen", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["sec4_constants.json", "linear_closed_form.json", "shifted_sec4.json"] {
        assert_eq!(
            fs::read(tmp.path().join(name)).unwrap(),
            fs::read(fixture(name)).unwrap(),
            "{name}"
        );
    }
}
