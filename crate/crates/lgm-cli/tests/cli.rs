//! Command-line behaviour: exit codes, partial-output removal, and the
//! relationship between the missing and complete variants of one seed.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgm"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(lgm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(lgm(&["simulate"]).status.code(), Some(1)); // missing required flags
    assert_eq!(lgm(&["--help"]).status.code(), Some(0));
    for sub in ["simulate", "fit", "path", "classify", "impute", "cv", "eval-omega"] {
        let out = lgm(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--"), "{sub} help lists flags");
    }
}

#[test]
fn runtime_errors_exit_two_with_one_line_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = lgm(&[
        "fit",
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--schema",
        dir.path().join("nope.txt").to_str().unwrap(),
        "--out",
        dir.path().join("model.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "stderr: {err}");
    assert!(!dir.path().join("model.json").exists());
}

#[test]
fn failed_path_command_removes_partial_outputs() {
    // A singular covariance makes the constrained-L1 column programs
    // infeasible below lambda = 0.5; the first (large) lambda solves and
    // writes files, the second fails, and the guard must remove everything.
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(
        &model,
        r#"{
  "version": 1,
  "schema": [
    {"name": "a", "kind": "continuous"},
    {"name": "b", "kind": "continuous"}
  ],
  "thresholds": [null, null],
  "mu": [0.0, 0.0],
  "sigma": [[1.0, 1.0], [1.0, 1.0]]
}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("path");
    let out = lgm(&[
        "path",
        "--model",
        model.to_str().unwrap(),
        "--method",
        "clime",
        "--lambdas",
        "0.9,0.2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:"), "{err}");
    let leftovers: Vec<_> = match fs::read_dir(&out_dir) {
        Ok(entries) => entries.map(|e| e.unwrap().file_name()).collect(),
        Err(_) => Vec::new(),
    };
    assert!(leftovers.is_empty(), "partial outputs left: {leftovers:?}");
}

#[test]
fn missing_and_complete_runs_share_the_base_data() {
    let dir = tempfile::tempdir().unwrap();
    let complete = dir.path().join("complete");
    let missing = dir.path().join("missing");
    for (flag, out) in [("--no-missing", &complete), ("--missing", &missing)] {
        let res = lgm(&[
            "simulate", "--scenario", "3", "--n", "60", "--seed", "21", flag, "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    }
    // Ground truth identical; data identical except NA cells.
    for f in ["schema.txt", "truth_omega.json", "truth_sigma.json", "latent.csv"] {
        assert_eq!(
            fs::read(complete.join(f)).unwrap(),
            fs::read(missing.join(f)).unwrap(),
            "{f} differs between variants"
        );
    }
    let read_cells = |p: &Path| -> Vec<Vec<String>> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_owned).collect())
            .collect()
    };
    let c = read_cells(&complete.join("data.csv"));
    let m = read_cells(&missing.join("data.csv"));
    assert_eq!(c.len(), m.len());
    let mut masked = 0;
    for (rc, rm) in c.iter().zip(&m) {
        for (vc, vm) in rc.iter().zip(rm) {
            if vm == "NA" {
                masked += 1;
            } else {
                assert_eq!(vc, vm);
            }
        }
    }
    assert!(masked > 0, "missing variant masked no cells");
}
