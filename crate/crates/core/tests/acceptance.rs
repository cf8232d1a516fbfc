mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use behavlog::layout::StorageConfig;
use behavlog::logstore::BehaviorLog;
use behavlog::matching::{max_weight, max_weight_bipartite, max_weight_matching};
use behavlog::pipeline::{default_checkpoints, run_pipeline, PipelineOptions, Simulation};
use behavlog::split_opt::SplitMode;
use behavlog::workload::{calibrate_stats, generate, Workload, WorkloadParams, WorkloadStats, CALIBRATION_SEED};

use common::{brute_bipartite, brute_matching};

fn report(n: u32, ok: bool, detail: &str) {
    println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn total(sim: &Simulation) -> u64 {
    sim.log.measure_sizes().total_bytes + sim.config.serialized_bytes()
}

struct Calibrated {
    workload: Workload,
    stats: WorkloadStats,
    sim: Simulation,
}

fn calibrated() -> &'static Calibrated {
    static CELL: OnceLock<Calibrated> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = WorkloadParams::calibrated(CALIBRATION_SEED);
        let workload = generate(&p).unwrap();
        let sim = Simulation::run(&workload, p.days, PipelineOptions::default()).unwrap();
        let stats = calibrate_stats(&workload.events, &workload.catalog, &sim.baseline);
        Calibrated { workload, stats, sim }
    })
}

/// Every shard holds k dense columns and every schema binds all of them.
fn dense_shards(sim: &Simulation) -> Result<(), String> {
    let cfg = &sim.config;
    if sim.log.shard_count() != cfg.distinct_attr_counts() {
        return Err(format!("{} shards for {} attribute counts", sim.log.shard_count(), cfg.distinct_attr_counts()));
    }
    let ks: BTreeSet<usize> = cfg.shards.keys().map(|&s| cfg.k(s)).collect();
    if ks.len() != cfg.shards.len() {
        return Err("two shards share an attribute count".into());
    }
    for s in &cfg.schemas {
        let k = cfg.k(s.shard);
        let cols: BTreeSet<usize> = s.mapping.bindings.iter().map(|b| b.column as usize).collect();
        if cols != (0..k).collect() || s.mapping.bindings.len() != k {
            return Err(format!("schema of {:?} binds {cols:?} in a {k}-column shard", s.members));
        }
        let spec = &cfg.shards[&s.shard];
        for b in &s.mapping.bindings {
            let w = sim.catalog.attr_width(s.behavior, &b.attr).unwrap();
            if spec.widths[b.column as usize] < w {
                return Err(format!("column {} narrower than {}", b.column, b.attr));
            }
        }
    }
    for shard in sim.log.shards() {
        if shard.widths().len() != cfg.k(shard.id()) {
            return Err(format!("{} has {} columns, expected {}", shard.id(), shard.widths().len(), cfg.k(shard.id())));
        }
    }
    Ok(())
}

#[test]
fn c1_optimized_features_equal_baseline() {
    let start = Instant::now();
    let results: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let p = WorkloadParams::calibrated(seed);
            let w = generate(&p).unwrap();
            let sim = Simulation::run(&w, p.days, PipelineOptions::default()).unwrap();
            let v = sim.verify(&default_checkpoints(p.days)).unwrap();
            (seed, w.events.len(), w.catalog.filter_count(), v)
        })
        .collect();
    let elapsed = start.elapsed();
    let checked: u64 = results.iter().map(|r| r.3.checked).sum();
    let mismatches: usize = results.iter().map(|r| r.3.mismatches.len()).sum();
    let min_filters = results.iter().map(|r| r.2).min().unwrap();
    let mean_events = results.iter().map(|r| r.1).sum::<usize>() as f64 / results.len() as f64;
    let ok = mismatches == 0 && min_filters >= 20 && elapsed < Duration::from_secs(120);
    report(
        1,
        ok,
        &format!(
            "100 workloads, mean {mean_events:.0} events, min {min_filters} filters, {checked} feature values compared, {mismatches} mismatches, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    for (seed, _, _, v) in &results {
        assert!(v.ok(), "seed {seed}: {:?}", v.mismatches.first());
    }
    assert!(min_filters >= 20);
    assert!((4500.0..5500.0).contains(&mean_events), "mean events {mean_events}");
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize, i64)> {
    let density = rng.random_range(0.2..1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(density) {
                edges.push((u, v, rng.random_range(1..60)));
            }
        }
    }
    edges
}

#[test]
fn c2_matching_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut general_bad = 0;
    let mut bipartite_bad = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let edges = random_graph(&mut rng, n);
        let expected = brute_matching(n, &edges);
        let pairs = max_weight_matching(n, &edges);
        let mut used = vec![false; n];
        let mut w = 0;
        let mut valid = true;
        for &(u, v) in &pairs {
            valid &= !used[u] && !used[v];
            used[u] = true;
            used[v] = true;
            w += edges.iter().filter(|e| (e.0, e.1) == (u.min(v), u.max(v))).map(|e| e.2).max().unwrap_or(i64::MIN / 4);
        }
        if !valid || w != expected || max_weight(n, &edges) != expected {
            general_bad += 1;
        }

        let left = rng.random_range(1..=5);
        let right = rng.random_range(1..=(10 - left).min(5));
        let density = rng.random_range(0.2..1.0);
        let mut bedges = Vec::new();
        for l in 0..left {
            for r in 0..right {
                if rng.random_bool(density) {
                    bedges.push((l, r, rng.random_range(1..60)));
                }
            }
        }
        let expected = brute_bipartite(left, right, &bedges);
        let assign = max_weight_bipartite(left, right, &bedges);
        let ls: BTreeSet<_> = assign.iter().map(|a| a.0).collect();
        let rs: BTreeSet<_> = assign.iter().map(|a| a.1).collect();
        let w: i64 = assign.iter().map(|&(l, r)| bedges.iter().find(|e| (e.0, e.1) == (l, r)).map_or(i64::MIN / 4, |e| e.2)).sum();
        if ls.len() != assign.len() || rs.len() != assign.len() || w != expected {
            bipartite_bad += 1;
        }
    }
    let ok = general_bad == 0 && bipartite_bad == 0;
    report(2, ok, &format!("200 general graphs: {general_bad} mismatches; 200 bipartite graphs: {bipartite_bad} mismatches"));
    assert_eq!(general_bad, 0);
    assert_eq!(bipartite_bad, 0);
}

#[test]
fn c3_reported_size_is_file_length() {
    let mut files = 0;
    let mut bad = Vec::new();
    for seed in 0..6u64 {
        let mut p = WorkloadParams::calibrated(seed);
        p.days = 4;
        let w = generate(&p).unwrap();
        for mode in [SplitMode::Vhan, SplitMode::Unified] {
            let sim = Simulation::run(&w, p.days, PipelineOptions { mode, ..Default::default() }).unwrap();
            for log in [&sim.log, &sim.baseline] {
                let dir = tempfile::tempdir().unwrap();
                log.save(dir.path()).unwrap();
                for shard in log.shards() {
                    let len = std::fs::metadata(dir.path().join(format!("{}.adlg", shard.id()))).unwrap().len();
                    files += 1;
                    if shard.measure_sizes().total_bytes != len {
                        bad.push(format!("seed {seed} {}: {} vs {len}", shard.id(), shard.measure_sizes().total_bytes));
                    }
                }
                let disk = BehaviorLog::disk_bytes(dir.path()).unwrap();
                if log.measure_sizes().total_bytes != disk {
                    bad.push(format!("seed {seed} log total {} vs {disk}", log.measure_sizes().total_bytes));
                }
                if BehaviorLog::load(dir.path()).unwrap() != *log {
                    bad.push(format!("seed {seed} reload differs"));
                }
            }
        }
    }
    report(3, bad.is_empty(), &format!("{files} shard files, {} size mismatches", bad.len()));
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn c4_compression_on_calibrated_workload() {
    let c = calibrated();
    let ratio = c.sim.compression_ratio();
    let red_ok = (c.stats.redundancy - 0.667).abs() <= 0.05;
    let null_ok = (c.stats.null_share - 0.509).abs() <= 0.05;
    let ratio_ok = (0.15..=0.60).contains(&ratio);
    report(
        4,
        red_ok && null_ok && ratio_ok,
        &format!(
            "seed {CALIBRATION_SEED}: redundancy {:.3} (0.667 ± 0.05), null share {:.3} (0.509 ± 0.05), compression ratio {ratio:.3} in [0.15, 0.60]; reference range 0.19 to 0.44, mean 0.351",
            c.stats.redundancy, c.stats.null_share
        ),
    );

    let spread: Vec<(f64, f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let p = WorkloadParams::calibrated(seed);
            let w = generate(&p).unwrap();
            let sim = Simulation::run(&w, p.days, PipelineOptions::default()).unwrap();
            let st = calibrate_stats(&w.events, &w.catalog, &sim.baseline);
            (st.redundancy, st.null_share, sim.compression_ratio())
        })
        .collect();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| spread.iter().map(f).sum::<f64>() / spread.len() as f64;
    let lo = spread.iter().map(|s| s.2).fold(f64::MAX, f64::min);
    let hi = spread.iter().map(|s| s.2).fold(f64::MIN, f64::max);
    println!(
        "info criterion 4: seeds 0..20 mean redundancy {:.3}, mean null share {:.3}, compression ratio mean {:.3} range {lo:.3}..{hi:.3}",
        mean(|s| s.0),
        mean(|s| s.1),
        mean(|s| s.2)
    );

    assert!(red_ok, "redundancy {}", c.stats.redundancy);
    assert!(null_ok, "null share {}", c.stats.null_share);
    assert!(ratio_ok, "ratio {ratio}");
}

#[test]
fn c5_merge_objective_never_increases() {
    let c = calibrated();
    let mut bad = Vec::new();
    let mut iterations = 0;
    for run in &c.sim.runs {
        let n = c.workload.catalog.filters_of(run.behavior).len();
        iterations += run.iterations.len();
        if !run.is_monotone() || run.iterations.iter().any(|i| i.objective_after > i.objective_before) {
            bad.push(format!("{:?} not monotone", run.behavior));
        }
        for pair in run.iterations.windows(2) {
            if pair[1].objective_before != pair[0].objective_after {
                bad.push(format!("{:?} objective jumps between iterations", run.behavior));
            }
        }
        if run.iterations.len() > n {
            bad.push(format!("{:?}: {} iterations for {n} filters", run.behavior, run.iterations.len()));
        }
    }
    let flagged = c.sim.reports.iter().all(|r| r.merge_monotone && r.merge_within_bound);
    report(5, bad.is_empty() && flagged, &format!("{} merge runs, {iterations} iterations, {} violations", c.sim.runs.len(), bad.len()));
    assert!(!c.sim.runs.is_empty());
    assert!(bad.is_empty(), "{bad:?}");
    assert!(flagged);
}

#[test]
fn c6_incremental_update_economy() {
    let rows: Vec<_> = (0..6u64)
        .into_par_iter()
        .map(|seed| {
            let p = WorkloadParams::drifting(seed);
            let w = generate(&p).unwrap();
            let sim = Simulation::run(&w, p.days, PipelineOptions { check_rebuild: true, ..Default::default() }).unwrap();
            let later = &sim.reports[1..];
            let written: u64 = later.iter().map(|r| r.io.rows_written).sum();
            let rb_written: u64 = later.iter().map(|r| r.rebuild_io.unwrap().rows_written).sum();
            let ops: u64 = later.iter().map(|r| r.io.ops()).sum();
            let rb_ops: u64 = later.iter().map(|r| r.rebuild_io.unwrap().ops()).sum();
            let persist = later.iter().map(|r| r.behaviors_unchanged as f64 / r.behaviors as f64).fold(1.0, f64::min);
            let identical = sim.reports.iter().all(|r| r.rebuild_identical == Some(true));
            (seed, persist, written as f64 / rb_written as f64, rb_ops as f64 / ops.max(1) as f64, identical)
        })
        .collect();
    let mut ok = true;
    for &(seed, persist, written, speedup, identical) in &rows {
        let good = persist >= 0.8 && written <= 0.35 && speedup >= 2.0 && identical;
        ok &= good;
        println!(
            "info criterion 6: seed {seed} min persistence {persist:.2}, written {:.1}% of rebuild, op speedup {speedup:.1}x, identical {identical}",
            written * 100.0
        );
    }
    let worst_persist = rows.iter().map(|r| r.1).fold(1.0, f64::min);
    let worst_written = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let worst_speedup = rows.iter().map(|r| r.3).fold(f64::MAX, f64::min);
    report(
        6,
        ok,
        &format!(
            "6 drifting workloads: min persistence {worst_persist:.2} (>= 0.80), max written {:.1}% (<= 35%), min op speedup {worst_speedup:.1}x (>= 2x), all byte-identical {}",
            worst_written * 100.0,
            rows.iter().all(|r| r.4)
        ),
    );
    for &(seed, persist, written, speedup, identical) in &rows {
        assert!(persist >= 0.8, "seed {seed} persistence {persist}");
        assert!(written <= 0.35, "seed {seed} written {written}");
        assert!(speedup >= 2.0, "seed {seed} speedup {speedup}");
        assert!(identical, "seed {seed} differs from rebuild");
    }
}

#[test]
fn c7_dense_shards_and_unified_ablation() {
    let c = calibrated();
    let mut problems: Vec<String> = dense_shards(&c.sim).err().into_iter().collect();
    let extra: Vec<(u64, Result<(), String>, bool)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut p = WorkloadParams::calibrated(seed);
            p.days = 5;
            let w = generate(&p).unwrap();
            let vhan = Simulation::run(&w, p.days, PipelineOptions::default()).unwrap();
            let uni = Simulation::run(&w, p.days, PipelineOptions { mode: SplitMode::Unified, ..Default::default() }).unwrap();
            (seed, dense_shards(&vhan), total(&uni) > total(&vhan))
        })
        .collect();
    for (seed, r, _) in &extra {
        if let Err(e) = r {
            problems.push(format!("seed {seed}: {e}"));
        }
    }
    let uni = Simulation::run(&c.workload, 14, PipelineOptions { mode: SplitMode::Unified, ..Default::default() }).unwrap();
    let (v, u) = (total(&c.sim), total(&uni));
    let larger = u > v;
    let larger_elsewhere = extra.iter().filter(|e| e.2).count();
    report(
        7,
        problems.is_empty() && larger,
        &format!(
            "{} logs with shard count = attribute counts and no structural nulls ({} problems); unified layout {u} B vs {v} B ({:+.1}%); unified larger on {larger_elsewhere}/20 other seeds",
            extra.len() + 1,
            problems.len(),
            (u as f64 / v as f64 - 1.0) * 100.0
        ),
    );
    assert!(problems.is_empty(), "{problems:?}");
    assert!(larger, "unified {u} vs vhan {v}");
}

#[test]
fn c8_desk_scale_runtime() {
    let mut p = WorkloadParams::calibrated(CALIBRATION_SEED);
    p.filters_per_model = (2, 2);
    p.events_per_day = 50_000.0 / p.days as f64;
    let w = generate(&p).unwrap();
    let filters = w.catalog.filter_count();

    let start = Instant::now();
    let mut config = StorageConfig::singletons(&w.catalog);
    let mut log = common::ingest_all(&w.catalog, &config, &w.events);
    let ingested = start.elapsed();
    let baseline = common::ingest_all(&w.catalog, &StorageConfig::baseline(&w.catalog), &w.events).measure_sizes();
    let t = Instant::now();
    let out = run_pipeline(p.days - 1, &w.catalog, &mut config, &mut log, baseline, PipelineOptions::default()).unwrap();
    let elapsed = ingested + t.elapsed();
    let ok = elapsed <= Duration::from_secs(5);
    report(
        8,
        ok,
        &format!(
            "{} events, {filters} filters: ingest {:.0} ms, profile {:.0} ms, optimize {:.0} ms, update {:.0} ms, total {:.2}s (<= 5s), ratio {:.3}",
            w.events.len(),
            ingested.as_secs_f64() * 1e3,
            out.report.profile_ms,
            out.report.optimize_ms,
            out.report.update_ms,
            elapsed.as_secs_f64(),
            out.report.compression_ratio
        ),
    );
    assert_eq!(filters, 40);
    assert!((45_000..55_000).contains(&w.events.len()), "{} events", w.events.len());
    assert!(ok, "took {elapsed:?}");
}
