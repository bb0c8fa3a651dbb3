//! End-to-end checks of the scenario pipeline and the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

use barriergrasp::cli::{run_batch, validate_scenario};
use barriergrasp::sim::{self, grasp_initializer, truth_system, RunOutcome, Scenario};

fn short(name: &str, duration: f64) -> Scenario {
    Scenario::builtin(name)
        .unwrap()
        .with_overrides(&[format!("duration={duration}")])
        .unwrap()
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barriergrasp")).args(args).output().unwrap()
}

#[test]
fn runs_are_deterministic() {
    let s = short("cube_twist_filter_on", 0.4);
    let a = sim::run(&s).unwrap();
    let b = sim::run(&s).unwrap();
    assert_eq!(a.summary.to_json().unwrap(), b.summary.to_json().unwrap());
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.trace.write_csv(&mut ca).unwrap();
    b.trace.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn zero_duration_has_no_control_samples() {
    let r = sim::run(&short("cube_twist_filter_on", 0.0)).unwrap();
    assert!(r.trace.is_empty());
    assert_eq!(r.summary.outcome, RunOutcome::Completed);
    assert!(!r.summary.any_violation);
    assert_eq!(r.summary.min_h_robust, None);
}

#[test]
fn initializer_is_a_fixed_point() {
    let s = Scenario::builtin("cube_twist_filter_on").unwrap();
    let truth = truth_system(&s).unwrap();
    let first = grasp_initializer(&truth, &s.initial).unwrap();
    assert!(first.residual < 1e-8, "residual {:.3e}", first.residual);
    let again = grasp_initializer(&truth, &s.initial).unwrap();
    assert_eq!(first.state.q, again.state.q);
}

#[test]
fn builtins_pass_validation() {
    for name in ["cube_twist_filter_on", "cube_twist_filter_off"] {
        let report = validate_scenario(&Scenario::builtin(name).unwrap()).unwrap();
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| &c.name).collect();
        assert!(failed.is_empty(), "{name}: {failed:?}");
    }
}

/// With the true model in the loop the filter holds every family, and the
/// design pyramid keeps roughly its force margin.
#[test]
fn exact_model_keeps_every_family() {
    let s = short("cube_twist_filter_on", 1.0).with_overrides(&["estimate.mode=exact"]).unwrap();
    let r = sim::run(&s).unwrap();
    assert_eq!(r.summary.outcome, RunOutcome::Completed);
    let f = &r.summary.families;
    for (name, fam) in [("no_slip", &f.no_slip), ("joint", &f.joint), ("rolling", &f.rolling)] {
        let v = fam.min_h_robust.unwrap();
        assert!(v >= 0.0, "{name}: {v}");
    }
    let design = f.design_pyramid.min_h.unwrap();
    assert!(design >= 0.5 * s.margins.epsilon, "design pyramid {design}");
}

#[test]
fn unfiltered_twist_violates() {
    let r = sim::run(&short("cube_twist_filter_off", 1.0)).unwrap();
    assert!(r.summary.any_violation);
}

#[test]
fn override_errors_are_specific() {
    let s = Scenario::builtin("cube_twist_filter_on").unwrap();
    let e = s.with_overrides(&["margins.nope=1"]).unwrap_err().to_string();
    assert!(e.contains("margins.nope"), "{e}");
    assert!(s.with_overrides(&["duration=\"long\""]).is_err());
    assert!(s.with_overrides(&["duration"]).is_err());
    assert!(s.with_overrides(&["duration=-1"]).is_err());
}

#[test]
fn batch_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, r#"{"scenarios": ["cube_twist_filter_on", "missing_scenario"], "parallel": 2}"#).unwrap();
    let out = dir.path().join("out");
    let entries = run_batch(&manifest, &out, None, &["duration=0.05".into()]).unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries[0].summary.is_some());
    assert!(entries[1].error.as_deref().unwrap().contains("missing_scenario"));
    let run_dir = Path::new(&entries[0].directory);
    assert!(run_dir.join("trace.csv").is_file());
    assert!(run_dir.join("summary.json").is_file());
    assert!(out.join("batch.json").is_file());
}

#[test]
fn cli_envelope_and_run() {
    let out = bin(&["envelope", "--points", "3", "--kind", "linear"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), ["kind,q,v_lo,v_hi", "linear,1,0,3", "linear,2.5,-1.5,1.5", "linear,4,-3,0"]);

    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = bin(&[
        "run",
        "--scenario",
        "cube_twist_filter_on",
        "--override",
        "duration=0.1",
        "--json",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["outcome"]["status"], "completed");
    let on_disk: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, on_disk);
}

#[test]
fn cli_exit_codes() {
    assert!(bin(&["validate", "--scenario", "cube_twist_filter_on"]).status.success());
    let bad = bin(&["validate", "--scenario", "cube_twist_filter_on", "--override", "bogus=1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}
