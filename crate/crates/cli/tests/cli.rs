use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg-consume"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(out: &Path, command: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        command,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn merton_solve_gives_constant_pi_star_five() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "solve", &scenario("merton"), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let mut reader = csv::Reader::from_path(tmp.path().join("equilibrium.csv")).unwrap();
    let header: Vec<String> = reader
        .headers()
        .unwrap()
        .iter()
        .map(str::to_string)
        .collect();
    assert_eq!(
        header,
        ["t", "type", "pi_star", "c_star", "y_tilde", "phi", "psi", "z0"]
    );
    let mut n = 0;
    for r in reader.records() {
        let r = r.unwrap();
        assert_eq!(r[2].parse::<f64>().unwrap(), 5.0);
        n += 1;
    }
    assert_eq!(n, 501);

    let m = manifest(tmp.path());
    assert_eq!(m["files"], serde_json::json!(["equilibrium.csv"]));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["passed"], true);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn verify_reference_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), "verify", &scenario("reference"), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let m = manifest(tmp.path());
    let residual = m["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "bsde_residual_sup")
        .unwrap();
    assert!(residual["measured"].as_f64().unwrap() <= 1e-4);
    assert_eq!(residual["tolerance"].as_f64().unwrap(), 1e-4);
    for f in ["residual.csv", "drift.csv", "relations.csv"] {
        assert!(tmp.path().join(f).exists());
    }
}

#[test]
fn solution_round_trip_reproduces_checks_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario("two-type");
    let (solved, fresh, reread) = (
        tmp.path().join("s"),
        tmp.path().join("a"),
        tmp.path().join("b"),
    );
    assert_eq!(
        run_in(&solved, "solve", &cfg, &["--seed", "3"])
            .status
            .code(),
        Some(0)
    );
    let a = run_in(&fresh, "verify", &cfg, &["--seed", "3"]);
    let csv = solved.join("equilibrium.csv");
    let b = run_in(
        &reread,
        "verify",
        &cfg,
        &["--seed", "3", "--solution", csv.to_str().unwrap()],
    );
    assert_eq!(a.status.code(), b.status.code());
    let (ma, mb) = (manifest(&fresh), manifest(&reread));
    assert_eq!(ma["checks"], mb["checks"]);
    assert_eq!(ma["passed"], mb["passed"]);
}

#[test]
fn tampered_solution_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario("merton");
    let solved = tmp.path().join("s");
    assert_eq!(run_in(&solved, "solve", &cfg, &[]).status.code(), Some(0));
    let csv = solved.join("equilibrium.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[10].split(',').map(str::to_string).collect();
    fields[3] = (fields[3].parse::<f64>().unwrap() * 1.01).to_string();
    lines[10] = fields.join(",");
    fs::write(&csv, lines.join("\n") + "\n").unwrap();

    let out = run_in(
        &tmp.path().join("v"),
        "verify",
        &cfg,
        &["--solution", csv.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
    let failed = stderr_json(&out);
    assert_eq!(failed["status"], "check_failed");
    let names: Vec<&str> = failed["failed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"riccati_relative_error"), "{names:?}");
    assert_eq!(manifest(&tmp.path().join("v"))["passed"], false);
}

#[test]
fn sigma0_sweep_turns_within_one_cell_of_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        "sweep",
        &scenario("threshold"),
        &["--param", "sigma0", "--range", "0.01:2"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );

    let mut markers = csv::Reader::from_path(tmp.path().join("markers.csv")).unwrap();
    let mut binding = None;
    let mut turns = Vec::new();
    for r in markers.records() {
        let r = r.unwrap();
        let v: f64 = r[1].parse().unwrap();
        match &r[0] {
            "sigma0_binding" => binding = Some(v),
            "slope_sign_change" => turns.push(v),
            _ => {}
        }
    }
    let binding = binding.expect("threshold marker");

    let mut rows = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let values: Vec<f64> = rows
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    let cell = values[1] - values[0];
    assert_eq!(turns.len(), 1, "{turns:?}");
    assert!(
        (turns[0] - binding).abs() <= cell,
        "turn {} vs threshold {binding}",
        turns[0]
    );
}

#[test]
fn population_sweep_flags_rows_outside_assumptions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        "sweep",
        &scenario("threshold"),
        &[
            "--param",
            "theta",
            "--range",
            "0:0.5",
            "--points",
            "6",
            "--mode",
            "population",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let mut rows = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let flags: Vec<bool> = rows
        .records()
        .map(|r| r.unwrap()[3].parse().unwrap())
        .collect();
    assert_eq!(flags, [false, true, true, true, true, true]);
}

#[test]
fn gamma_zero_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"horizon": 1, "population": [{"name": "bad", "gamma": 0.0, "h": 0.05, "sigma": 0.2}]}"#,
    );
    let out = run_in(&tmp.path().join("o"), "solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["status"], "usage_error");
    let v = &err["violations"][0];
    assert_eq!(v["type_name"], "bad");
    assert_eq!(v["rule"], "gamma_nonzero");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn wrong_curve_length_is_a_structural_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"horizon": 1, "n_steps": 4, "population": [{"gamma": 0.5, "h": [0.05, 0.05], "sigma": 0.2}]}"#,
    );
    let out = run_in(&tmp.path().join("o"), "solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_json(&out)["message"].as_str().unwrap().to_string();
    assert!(
        msg.contains("population[0].h") && msg.contains("expected n_steps + 1 = 5"),
        "{msg}"
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["solve"]).status.code(), Some(2));
    assert_eq!(run(&["launch"]).status.code(), Some(2));
    let cfg = scenario("threshold");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "rho",
        "--range",
        "0:1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn thread_cap_must_be_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario("merton");
    let out = Command::new(env!("CARGO_BIN_EXE_mfg-consume"))
        .args([
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ])
        .env("MFG_CONSUME_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_and_deviate_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario("two-type");
    let small = [
        "--seed",
        "5",
        "--steps",
        "50",
        "--samples",
        "4000",
        "--agents",
        "4000",
        "--paths",
        "2",
    ];
    for dir in ["a", "b"] {
        let out = run_in(&tmp.path().join(dir), "simulate", &cfg, &small);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
    let read = |d: &str, f: &str| fs::read_to_string(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "consistency.csv"), read("b", "consistency.csv"));
    assert_eq!(read("a", "flow.csv").lines().count(), 1 + 2 * 51);
    assert_eq!(manifest(&tmp.path().join("a"))["seed"], 5);

    let out = run_in(
        &tmp.path().join("d"),
        "deviate",
        &cfg,
        &[
            "--seed",
            "5",
            "--steps",
            "50",
            "--samples",
            "4000",
            "--type",
            "1",
        ],
    );
    assert!(matches!(out.status.code(), Some(0 | 1)));
    assert_eq!(read("d", "deviation.csv").lines().count(), 21);
    let bad = run_in(&tmp.path().join("e"), "deviate", &cfg, &["--type", "7"]);
    assert_eq!(bad.status.code(), Some(2));
}
