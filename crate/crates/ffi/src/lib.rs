//! C ABI over the behavlog engine. Objects are opaque handles released with
//! their `*_free` function; every call returns a `BlStatus`, and the text of
//! the most recent failure on the calling thread is kept for `bl_last_error`.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the access the function
//! documents. Handles must come from this library and be freed at most once.
//! Strings are NUL-terminated UTF-8.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use behavlog::catalog::{Catalog, FeatureId};
use behavlog::featcomp::{evaluate, FeatureError};
use behavlog::layout::StorageConfig;
use behavlog::logstore::BehaviorLog;
use behavlog::matching::max_weight_matching;
use behavlog::pipeline::{default_checkpoints, PipelineOptions, Simulation};
use behavlog::workload::{calibrate_stats, generate, WorkloadParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    NotFound = 5,
    TypeMismatch = 6,
    InvalidArgument = 7,
    Internal = 8,
}

pub struct BlCatalog(Catalog);
pub struct BlConfig(StorageConfig);
pub struct BlLog(BehaviorLog);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("no interior nul")));
}

struct Fail(BlStatus, String);

impl Fail {
    fn new(status: BlStatus, e: impl std::fmt::Display) -> Self {
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside behavlog");
            BlStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(BlStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail::new(BlStatus::InvalidUtf8, e))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(BlStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(BlStatus::NullArgument, format!("{name} is null")))
}

fn put_string(out: &mut *mut c_char, s: String) -> Result<(), Fail> {
    *out = CString::new(s).map_err(|e| Fail::new(BlStatus::Internal, e))?.into_raw();
    Ok(())
}

fn io_status(e: &std::io::Error) -> BlStatus {
    if e.kind() == std::io::ErrorKind::NotFound {
        BlStatus::NotFound
    } else {
        BlStatus::Io
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn bl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a catalog JSON file.
#[no_mangle]
pub unsafe extern "C" fn bl_catalog_load(path: *const c_char, out: *mut *mut BlCatalog) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let c = Catalog::load(path).map_err(|e| match &e {
            behavlog::catalog::CatalogError::Io(io) => Fail::new(io_status(io), &e),
            _ => Fail::new(BlStatus::Parse, &e),
        })?;
        *out = Box::into_raw(Box::new(BlCatalog(c)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_catalog_free(c: *mut BlCatalog) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

#[no_mangle]
pub unsafe extern "C" fn bl_catalog_filter_count(c: *const BlCatalog, out: *mut u64) -> BlStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(c, "catalog")?.0.filter_count() as u64;
        Ok(())
    })
}

/// Loads a storage config JSON file.
#[no_mangle]
pub unsafe extern "C" fn bl_config_load(path: *const c_char, out: *mut *mut BlConfig) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let c = StorageConfig::load(path).map_err(|e| match &e {
            behavlog::layout::ConfigError::Io(io) => Fail::new(io_status(io), &e),
            _ => Fail::new(BlStatus::Parse, &e),
        })?;
        *out = Box::into_raw(Box::new(BlConfig(c)));
        Ok(())
    })
}

/// The fixed-width baseline layout for a catalog.
#[no_mangle]
pub unsafe extern "C" fn bl_config_baseline(catalog: *const BlCatalog, out: *mut *mut BlConfig) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = ref_arg(catalog, "catalog")?;
        *out = Box::into_raw(Box::new(BlConfig(StorageConfig::baseline(&c.0))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_config_free(c: *mut BlConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Loads a log directory of shard files.
#[no_mangle]
pub unsafe extern "C" fn bl_log_load(dir: *const c_char, out: *mut *mut BlLog) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = str_arg(dir, "dir")?;
        let log = BehaviorLog::load(dir).map_err(|e| match &e {
            behavlog::logstore::StoreError::Io(io) => Fail::new(io_status(io), &e),
            _ => Fail::new(BlStatus::Parse, &e),
        })?;
        *out = Box::into_raw(Box::new(BlLog(log)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_log_free(l: *mut BlLog) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

#[no_mangle]
pub unsafe extern "C" fn bl_log_total_bytes(log: *const BlLog, out: *mut u64) -> BlStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(log, "log")?.0.measure_sizes().total_bytes;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_log_row_count(log: *const BlLog, out: *mut u64) -> BlStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(log, "log")?.0.row_count() as u64;
        Ok(())
    })
}

/// Evaluates a feature at `now_ms`; the value is written as JSON to `out`,
/// to be released with `bl_string_free`.
#[no_mangle]
pub unsafe extern "C" fn bl_feature_evaluate(
    catalog: *const BlCatalog,
    config: *const BlConfig,
    log: *const BlLog,
    feature: u32,
    now_ms: i64,
    out: *mut *mut c_char,
) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (c, cfg, l) = (ref_arg(catalog, "catalog")?, ref_arg(config, "config")?, ref_arg(log, "log")?);
        let v = evaluate(&c.0, FeatureId(feature), &cfg.0, &l.0, now_ms).map_err(|e| {
            let status = match e {
                FeatureError::UnknownFeature(_) | FeatureError::UnknownFilter(_) | FeatureError::FilterNotInConfig(_) => BlStatus::NotFound,
                FeatureError::TypeMismatch { .. } => BlStatus::TypeMismatch,
                FeatureError::MissingValue { .. } | FeatureError::Store(_) => BlStatus::Internal,
            };
            Fail::new(status, e)
        })?;
        put_string(out, serde_json::to_string(&v).map_err(|e| Fail::new(BlStatus::Internal, e))?)
    })
}

/// Maximum-weight matching on an undirected graph with `n` vertices and `m`
/// edges `(us[i], vs[i], ws[i])`. `mates` receives `n` entries: the partner of
/// each vertex or -1. `weight` receives the matching's total weight.
#[no_mangle]
pub unsafe extern "C" fn bl_max_weight_matching(
    n: usize,
    us: *const u32,
    vs: *const u32,
    ws: *const i64,
    m: usize,
    mates: *mut i64,
    weight: *mut i64,
) -> BlStatus {
    guard(|| {
        if m > 0 && (us.is_null() || vs.is_null() || ws.is_null()) {
            return Err(Fail(BlStatus::NullArgument, "edge arrays are null".into()));
        }
        if n > 0 && mates.is_null() {
            return Err(Fail(BlStatus::NullArgument, "mates is null".into()));
        }
        let weight = out_arg(weight, "weight")?;
        let (us, vs, ws) = if m == 0 {
            (&[][..], &[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(us, m), std::slice::from_raw_parts(vs, m), std::slice::from_raw_parts(ws, m))
        };
        let mut edges = Vec::with_capacity(m);
        for i in 0..m {
            let (u, v) = (us[i] as usize, vs[i] as usize);
            if u >= n || v >= n || u == v {
                return Err(Fail(BlStatus::InvalidArgument, format!("edge {i} ({u}, {v}) is invalid for {n} vertices")));
            }
            edges.push((u, v, ws[i]));
        }
        let pairs = max_weight_matching(n, &edges);
        let out = if n == 0 { &mut [][..] } else { std::slice::from_raw_parts_mut(mates, n) };
        out.fill(-1);
        let mut total = 0i64;
        for (u, v) in pairs {
            out[u] = v as i64;
            out[v] = u as i64;
            total += edges.iter().filter(|e| (e.0.min(e.1), e.0.max(e.1)) == (u.min(v), u.max(v))).map(|e| e.2).max().unwrap_or(0);
        }
        *weight = total;
        Ok(())
    })
}

/// Generates the calibrated workload for `seed`, simulates `days` nights of
/// ingest and optimization, and writes a JSON summary to `out`.
#[no_mangle]
pub unsafe extern "C" fn bl_simulate(seed: u64, days: u32, drift_rate: f64, out: *mut *mut c_char) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut p = WorkloadParams::calibrated(seed);
        if days > 0 {
            p.days = days;
        }
        p.drift_rate = drift_rate;
        let w = generate(&p).map_err(|e| Fail(BlStatus::InvalidArgument, e))?;
        let sim = Simulation::run(&w, p.days, PipelineOptions::default()).map_err(|e| Fail::new(BlStatus::Internal, e))?;
        let verify = sim.verify(&default_checkpoints(p.days)).map_err(|e| Fail::new(BlStatus::Internal, e))?;
        let summary = serde_json::json!({
            "filters": w.catalog.filter_count(),
            "events": w.events.len(),
            "compression_ratio": sim.compression_ratio(),
            "baseline_bytes": sim.baseline.measure_sizes().total_bytes,
            "optimized_bytes": sim.log.measure_sizes().total_bytes,
            "config_bytes": sim.config.serialized_bytes(),
            "workload": calibrate_stats(&w.events, &w.catalog, &sim.baseline),
            "verified_values": verify.checked,
            "mismatches": verify.mismatches.len(),
        });
        put_string(out, summary.to_string())
    })
}
