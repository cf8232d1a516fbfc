use std::ffi::{CStr, CString};
use std::ptr;

use behavlog::layout::StorageConfig;
use behavlog::pipeline::Workspace;
use behavlog::workload::{generate, WorkloadParams};
use behavlog_ffi::*;

fn last_error() -> String {
    let p = bl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn matching_through_c_abi() {
    // 0-1 (5), 1-2 (11), 2-3 (5): the middle edge wins over the two ends.
    let us = [0u32, 1, 2];
    let vs = [1u32, 2, 3];
    let ws = [5i64, 11, 5];
    let mut mates = [0i64; 4];
    let mut w = 0i64;
    let s = unsafe { bl_max_weight_matching(4, us.as_ptr(), vs.as_ptr(), ws.as_ptr(), 3, mates.as_mut_ptr(), &mut w) };
    assert_eq!(s, BlStatus::Ok);
    assert_eq!(w, 11);
    assert_eq!(mates, [-1, 2, 1, -1]);

    let ws = [6i64, 11, 6];
    let s = unsafe { bl_max_weight_matching(4, us.as_ptr(), vs.as_ptr(), ws.as_ptr(), 3, mates.as_mut_ptr(), &mut w) };
    assert_eq!(s, BlStatus::Ok);
    assert_eq!(w, 12);
    assert_eq!(mates, [1, 0, 3, 2]);
}

#[test]
fn matching_rejects_bad_edges() {
    let us = [0u32];
    let vs = [7u32];
    let ws = [1i64];
    let mut mates = [0i64; 2];
    let mut w = 0;
    let s = unsafe { bl_max_weight_matching(2, us.as_ptr(), vs.as_ptr(), ws.as_ptr(), 1, mates.as_mut_ptr(), &mut w) };
    assert_eq!(s, BlStatus::InvalidArgument);
    assert!(last_error().contains("invalid"));
    let s = unsafe { bl_max_weight_matching(2, ptr::null(), vs.as_ptr(), ws.as_ptr(), 1, mates.as_mut_ptr(), &mut w) };
    assert_eq!(s, BlStatus::NullArgument);
}

#[test]
fn null_and_missing_inputs() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { bl_catalog_load(ptr::null(), &mut c) }, BlStatus::NullArgument);
    let missing = CString::new("/nonexistent/catalog.json").unwrap();
    assert_eq!(unsafe { bl_catalog_load(missing.as_ptr(), &mut c) }, BlStatus::NotFound);
    assert!(c.is_null());
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { bl_log_load(missing.as_ptr(), &mut l) }, BlStatus::NotFound);
    unsafe {
        bl_catalog_free(ptr::null_mut());
        bl_string_free(ptr::null_mut());
    }
}

#[test]
fn evaluate_features_from_a_workspace() {
    let mut p = WorkloadParams::calibrated(3);
    p.days = 2;
    let w = generate(&p).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::create(dir.path(), &w).unwrap();
    ws.ingest(true, i64::MAX).unwrap();
    StorageConfig::baseline(&w.catalog).save(dir.path().join("baseline.json")).unwrap();

    unsafe {
        let mut cat = ptr::null_mut();
        assert_eq!(bl_catalog_load(cstr(&dir.path().join("catalog.json")).as_ptr(), &mut cat), BlStatus::Ok);
        let mut n = 0;
        assert_eq!(bl_catalog_filter_count(cat, &mut n), BlStatus::Ok);
        assert_eq!(n, w.catalog.filter_count() as u64);

        let mut cfg = ptr::null_mut();
        assert_eq!(bl_config_load(cstr(&dir.path().join("baseline.json")).as_ptr(), &mut cfg), BlStatus::Ok);
        let mut cfg2 = ptr::null_mut();
        assert_eq!(bl_config_baseline(cat, &mut cfg2), BlStatus::Ok);
        let mut log = ptr::null_mut();
        assert_eq!(bl_log_load(cstr(&dir.path().join("baseline")).as_ptr(), &mut log), BlStatus::Ok);
        let mut rows = 0;
        assert_eq!(bl_log_row_count(log, &mut rows), BlStatus::Ok);
        assert!(rows > 0);
        let mut bytes = 0;
        assert_eq!(bl_log_total_bytes(log, &mut bytes), BlStatus::Ok);
        assert_eq!(bytes, std::fs::read_dir(dir.path().join("baseline")).unwrap().map(|e| e.unwrap().metadata().unwrap().len()).sum::<u64>());

        let feat = w.catalog.features().next().unwrap().feature_id();
        let now = 2 * behavlog::catalog::DAY_MS;
        let expected = behavlog::featcomp::evaluate(&w.catalog, feat, &StorageConfig::baseline(&w.catalog), &ws.baseline_log().unwrap(), now).unwrap();
        for c in [cfg, cfg2] {
            let mut out = ptr::null_mut();
            assert_eq!(bl_feature_evaluate(cat, c, log, feat.0, now, &mut out), BlStatus::Ok);
            let got: behavlog::featcomp::FeatureValue = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
            assert_eq!(got, expected);
            bl_string_free(out);
        }

        let mut out = ptr::null_mut();
        assert_eq!(bl_feature_evaluate(cat, cfg, log, 999_999, now, &mut out), BlStatus::NotFound);
        assert!(out.is_null());
        assert!(last_error().contains("999999"));

        bl_log_free(log);
        bl_config_free(cfg);
        bl_config_free(cfg2);
        bl_catalog_free(cat);
    }
}

#[test]
fn simulate_summary() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bl_simulate(1, 3, 0.0, &mut out) }, BlStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { bl_string_free(out) };
    assert_eq!(v["mismatches"], 0);
    assert!(v["verified_values"].as_u64().unwrap() > 0);
    let ratio = v["compression_ratio"].as_f64().unwrap();
    assert!(ratio > 0.0 && ratio < 1.0);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/behavlog.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["bl_last_error", "bl_max_weight_matching", "bl_feature_evaluate", "bl_simulate", "bl_log_load"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ return bl_last_error() == 0 ? 0 : 1; }}\n")).unwrap();
    match std::process::Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg(&src).status() {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler; skipped syntax check"),
    }
}
