use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use barriergrasp_ffi::*;

fn last_error() -> String {
    let p = bg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { bg_string_free(p) };
    s
}

fn load(name: &str) -> *mut BgScenario {
    let source = CString::new(name).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { bg_scenario_load(source.as_ptr(), &mut s) }, BgStatus::Ok);
    s
}

fn set(s: *mut BgScenario, kv: &str) -> BgStatus {
    let kv = CString::new(kv).unwrap();
    unsafe { bg_scenario_override(s, kv.as_ptr()) }
}

#[test]
fn short_run_round_trip() {
    let s = load("cube_twist_filter_on");
    assert_eq!(set(s, "duration=0.3"), BgStatus::Ok);

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { bg_run(s, &mut run) }, BgStatus::Ok);
    let n = unsafe { bg_run_sample_count(run) };
    assert!(n > 50, "{n} samples");
    assert!(!unsafe { bg_run_any_violation(run) });
    assert!(unsafe { bg_run_min_h_robust(run) } > 0.0);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { bg_run_summary_json(run, &mut json) }, BgStatus::Ok);
    let summary: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(summary["samples"].as_u64(), Some(n as u64));
    assert_eq!(summary["scenario"], "cube_twist_filter_on");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bg_run_write_csv(run, cpath.as_ptr()) }, BgStatus::Ok);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), n + 1);

    unsafe {
        bg_run_free(run);
        bg_scenario_free(s);
    }
}

#[test]
fn bad_override_leaves_scenario_intact() {
    let s = load("cube_twist_filter_off");
    let before = {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { bg_scenario_to_json(s, &mut out) }, BgStatus::Ok);
        take_string(out)
    };
    assert_eq!(set(s, "no_such_key=1"), BgStatus::InvalidArgument);
    assert!(last_error().contains("no_such_key"));
    assert_eq!(set(s, "duration"), BgStatus::InvalidArgument);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bg_scenario_to_json(s, &mut out) }, BgStatus::Ok);
    assert_eq!(take_string(out), before);
    unsafe { bg_scenario_free(s) };
}

#[test]
fn scenario_json_round_trips() {
    let s = load("cube_twist_filter_on");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bg_scenario_to_json(s, &mut out) }, BgStatus::Ok);
    let text = CString::new(take_string(out)).unwrap();
    let mut again = ptr::null_mut();
    let status = unsafe { bg_scenario_from_json(text.as_ptr(), &mut again) };
    assert_eq!(status, BgStatus::Ok, "{}", if status == BgStatus::Ok { String::new() } else { last_error() });
    unsafe {
        bg_scenario_free(again);
        bg_scenario_free(s);
    }
}

#[test]
fn errors_map_to_codes() {
    let mut s = ptr::null_mut();
    let name = CString::new("no_such_scenario").unwrap();
    assert_eq!(unsafe { bg_scenario_load(name.as_ptr(), &mut s) }, BgStatus::InvalidArgument);
    assert!(s.is_null());

    let junk = CString::new("{ not json").unwrap();
    assert_eq!(unsafe { bg_scenario_from_json(junk.as_ptr(), &mut s) }, BgStatus::Parse);

    let bad = [0xffu8, 0];
    assert_eq!(unsafe { bg_scenario_load(bad.as_ptr().cast(), &mut s) }, BgStatus::InvalidUtf8);

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { bg_run(ptr::null(), &mut run) }, BgStatus::NullPointer);
    assert!(unsafe { bg_run_min_h_robust(ptr::null()) }.is_nan());
    assert_eq!(unsafe { bg_run_sample_count(ptr::null()) }, 0);
    unsafe {
        bg_run_free(ptr::null_mut());
        bg_scenario_free(ptr::null_mut());
        bg_string_free(ptr::null_mut());
    }
}

#[test]
fn envelope_values() {
    let (mut lo, mut hi) = (f64::NAN, f64::NAN);
    for (kind, expect) in [
        (BgEnvelopeKind::Linear, 1.5),
        (BgEnvelopeKind::Cubic, 0.15 * 1.5f64.powi(3)),
        (BgEnvelopeKind::Arctan, 2.0 * 1.5f64.atan()),
    ] {
        assert_eq!(unsafe { bg_velocity_envelope(kind, 1.0, 4.0, 2.5, &mut lo, &mut hi) }, BgStatus::Ok);
        assert!((hi - expect).abs() < 1e-12);
        assert!((lo + expect).abs() < 1e-12);
    }
    assert_eq!(
        unsafe { bg_velocity_envelope(BgEnvelopeKind::Linear, 1.0, 4.0, 2.5, ptr::null_mut(), &mut hi) },
        BgStatus::NullPointer
    );
}

/// The generated header must compile as both C and C++.
#[test]
fn header_compiles() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"barriergrasp.h\"\nint main(void) { BgScenario *s = 0; return bg_scenario_load(\"x\", &s) == BG_STATUS_OK; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .output()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
