use std::process::{Command, Output};

use serde_json::Value;

fn menhir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_menhir"))
        .args(args)
        .output()
        .expect("menhir runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON output")
}

#[test]
fn quadruplets_echo_config_and_are_ordered() {
    let v = stdout_json(&menhir(&[
        "sample-quadruplet",
        "--replicas",
        "5",
        "--seed",
        "7",
        "--format",
        "json",
    ]));
    assert_eq!(v["config"]["seed"], 7);
    let data = v["data"].as_array().unwrap();
    assert_eq!(data.len(), 5);
    for q in data {
        let t = ["theta_l", "theta_c", "theta_r"].map(|k| q[k].as_f64().unwrap());
        assert!(t[0] < t[1] && t[1] < t[2]);
        assert!(q["r"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn same_seed_same_output() {
    let args = [
        "sample-quadruplet",
        "--lambda",
        "1e4",
        "--replicas",
        "20",
        "--format",
        "csv",
    ];
    let a = menhir(&args);
    let b = menhir(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("# program: menhir "));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 21);
}

#[test]
fn cell_csv_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cell.csv");
    let out = menhir(&[
        "simulate-cell",
        "--lambda",
        "100",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let rows = menhir::export::parse_cell_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(rows.len() >= 3);
    assert_eq!(rows[0].y, 100.0);
}

#[test]
fn svg_menhir_has_two_branches() {
    let out = menhir(&["sample-menhir", "--n-max", "20"]);
    assert!(out.status.success());
    let svg = String::from_utf8(out.stdout).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("<circle").count(), 1);
}

#[test]
fn chain_trace_widths_decrease() {
    for lambda in ["1e4", "inf"] {
        let v = stdout_json(&menhir(&[
            "chain-trace",
            "--lambda",
            lambda,
            "--n-max",
            "30",
            "--format",
            "json",
        ]));
        let b: Vec<f64> = v["data"]["states"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["b"].as_f64().unwrap())
            .collect();
        assert!(b.len() > 1);
        assert!(b.windows(2).all(|w| w[1] < w[0]), "{lambda}: {b:?}");
    }
}

#[test]
fn density_eval_finite_close_to_ideal() {
    let v = stdout_json(&menhir(&[
        "density-eval",
        "--from",
        "1,1",
        "--to",
        "0.5,0.5",
        "--lambda",
        "1e6",
        "--format",
        "json",
    ]));
    let ideal = v["data"]["ideal_kernel"].as_f64().unwrap();
    let finite = v["data"]["finite_kernel"].as_f64().unwrap();
    assert!(ideal > 0.0 && (finite / ideal - 1.0).abs() < 1e-2);
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    assert_eq!(
        menhir(&["density-eval", "--from", "1", "--to", "1,1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        menhir(&["simulate-cell", "--lambda", "-3"]).status.code(),
        Some(2)
    );
    assert_eq!(
        menhir(&["verify", "shape", "--format", "svg"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        menhir(&["sample-quadruplet", "--format", "svg"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn small_verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = menhir(&[
        "verify",
        "lln",
        "--replicas",
        "20",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("criterion 2"), "{stderr}");
    let v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(v["config"]["replicas"], 20);
    assert_eq!(v["checks"][0]["criterion"], 2);
    assert_eq!(v["pass"].as_bool(), Some(out.status.success()));
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let run = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_menhir"))
            .env("MENHIR_THREADS", threads)
            .args(["verify", "vertices", "--replicas", "30", "--out"])
            .arg(&path)
            .output()
            .unwrap();
        assert!(matches!(out.status.code(), Some(0 | 1)));
        std::fs::read(&path).unwrap()
    };
    assert_eq!(run("1"), run("4"));
}
