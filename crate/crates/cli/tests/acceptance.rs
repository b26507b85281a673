//! Acceptance suite: runs `menhir verify all --seed 42` twice and prints one line per
//! criterion. Numerical thresholds are judged inside the experiments (see the tolerance
//! table echoed in the report); this suite adds the runtime budgets and the
//! byte-identical determinism check.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

/// Runtime budget in seconds per criterion. "Runtime seconds" is pinned at one minute.
const BUDGETS: [(u32, f64); 9] = [
    (1, 60.0),
    (2, 60.0),
    (3, 60.0),
    (4, 120.0),
    (5, 600.0),
    (6, 1200.0),
    (7, 300.0),
    (8, 60.0),
    (9, 60.0),
];

struct Run {
    report: Vec<u8>,
    /// Wall time of the check that judged each criterion.
    seconds: BTreeMap<u32, f64>,
}

fn verify_all(out: &Path) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_menhir"))
        .args(["verify", "all", "--seed", "42", "--out"])
        .arg(out)
        .output()
        .expect("menhir runs");
    let stderr = String::from_utf8_lossy(&output.stderr);
    eprint!("{stderr}");
    assert!(
        matches!(output.status.code(), Some(0 | 1)),
        "verify aborted: {:?}",
        output.status
    );
    let mut seconds = BTreeMap::new();
    for line in stderr.lines() {
        let Some(rest) = line.split(" criterion ").nth(1) else {
            continue;
        };
        let k: u32 = rest
            .split(':')
            .next()
            .and_then(|s| s.parse().ok())
            .expect("criterion number");
        let secs: f64 = line
            .rsplit('(')
            .next()
            .and_then(|s| s.trim_end_matches(" s)").parse().ok())
            .expect("timing");
        seconds.insert(k, secs);
    }
    Run {
        report: std::fs::read(out).expect("report written"),
        seconds,
    }
}

/// Written straight to the stderr handle, which the test harness does not capture, so
/// the summary shows up in passing runs too.
fn line(k: u32, pass: bool, detail: &str) -> bool {
    let status = if pass { "PASS" } else { "FAIL" };
    writeln!(std::io::stderr(), "{status} criterion {k:>2}: {detail}").expect("stderr");
    pass
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    // Same command line both times, including `--out`, which the report echoes.
    let path = dir.path().join("report.json");
    let first = verify_all(&path);
    let second = verify_all(&path);
    let report: Value = serde_json::from_slice(&first.report).expect("report is JSON");

    let mut judged: BTreeMap<u32, (bool, Vec<String>)> = BTreeMap::new();
    for check in report["checks"].as_array().expect("checks") {
        let Some(k) = check["criterion"].as_u64() else {
            continue;
        };
        let entry = judged.entry(k as u32).or_insert((true, Vec::new()));
        entry.0 &= check["pass"].as_bool().expect("pass flag");
        entry
            .1
            .push(check["name"].as_str().unwrap_or("").to_string());
    }

    let mut all = true;
    for (k, budget) in BUDGETS {
        let (numeric, names) = judged.remove(&k).unwrap_or((false, vec!["missing".into()]));
        let secs = first.seconds.get(&k).copied().unwrap_or(f64::INFINITY);
        let timely = secs < budget;
        let detail = format!(
            "{} [numeric {}, {secs:.1} s of {budget:.0} s]",
            names.join(", "),
            if numeric { "ok" } else { "out of tolerance" }
        );
        all &= line(k, numeric && timely, &detail);
    }
    let identical = first.report == second.report;
    all &= line(
        10,
        identical,
        &format!("byte-identical reports ({} bytes)", first.report.len()),
    );
    assert!(all, "acceptance criteria failed");
}
