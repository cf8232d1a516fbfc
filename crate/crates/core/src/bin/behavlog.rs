use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use behavlog::catalog::{FeatureId, DAY_MS};
use behavlog::featcomp::evaluate;
use behavlog::layout::StorageConfig;
use behavlog::logstore::BehaviorLog;
use behavlog::merge_opt::{optimize_merge, WeightModel};
use behavlog::pipeline::{default_checkpoints, run_pipeline, verify_features, PipelineOptions, Simulation, Workspace};
use behavlog::profiler::{profile, ProfileMetadata};
use behavlog::split_opt::SplitMode;
use behavlog::updater::{canonical_images, execute_plan, plan_update, rebuild};
use behavlog::workload::{calibrate_stats, generate, WorkloadParams, CALIBRATION_SEED};

#[derive(Parser)]
#[command(name = "behavlog", version, about = "Behavior-log storage engine and layout optimizer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Optimized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Calibrated,
    Drifting,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Exact,
    Pairwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Vhan,
    Unified,
}

#[derive(clap::Args, Clone, Copy)]
struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "exact")]
    weights: Weights,
    #[arg(long, value_enum, default_value = "vhan")]
    split: Split,
}

impl OptimizeArgs {
    fn options(self, check_rebuild: bool) -> PipelineOptions {
        PipelineOptions {
            model: match self.weights {
                Weights::Exact => WeightModel::Exact,
                Weights::Pairwise => WeightModel::Pairwise,
            },
            mode: match self.split {
                Split::Vhan => SplitMode::Vhan,
                Split::Unified => SplitMode::Unified,
            },
            check_rebuild,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic catalog and event stream into a workspace.
    Generate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = CALIBRATION_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value = "calibrated")]
        preset: Preset,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        events_per_day: Option<f64>,
        #[arg(long)]
        models: Option<usize>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        drift: Option<f64>,
    },
    /// Append pending events to one of the logs.
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Stop after this day (default: the whole stream).
        #[arg(long)]
        through_day: Option<u32>,
    },
    /// Collect optimizer inputs from the optimized log into profile.json.
    Profile {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Derive config.next.json from profile.json.
    Optimize {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        opts: OptimizeArgs,
    },
    /// Migrate the optimized log from config.json to config.next.json.
    Update {
        #[arg(long)]
        dir: PathBuf,
        /// Also rebuild from scratch and compare the results byte for byte.
        #[arg(long)]
        check_rebuild: bool,
    },
    /// Evaluate one feature.
    Compute {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        feature: u32,
        #[arg(long)]
        now: i64,
        #[arg(long, value_enum, default_value = "optimized")]
        mode: Mode,
    },
    /// Sizes of both logs and workload statistics.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Compare feature values between the baseline and optimized logs.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        /// `all` or a comma-separated list of feature ids.
        #[arg(long, default_value = "all")]
        features: String,
        /// Evaluation times in ms; default is midday and end of every ingested day.
        #[arg(long, value_delimiter = ',')]
        now: Vec<i64>,
    },
    /// Ingest day by day into both logs, running the nightly pipeline after each day.
    Pipeline {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        check_rebuild: bool,
        #[command(flatten)]
        opts: OptimizeArgs,
    },
    /// In-memory benchmark over generated workloads.
    Bench {
        #[arg(long, default_value_t = CALIBRATION_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, value_enum, default_value = "calibrated")]
        preset: Preset,
    },
}

fn params(preset: Preset, seed: u64) -> WorkloadParams {
    match preset {
        Preset::Calibrated => WorkloadParams::calibrated(seed),
        Preset::Drifting => WorkloadParams::drifting(seed),
    }
}

fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print(v: &serde_json::Value) {
    emit(&serde_json::to_string_pretty(v).expect("json"));
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Generate { dir, seed, preset, days, events_per_day, models, overlap, drift } => {
            let mut p = params(preset, seed);
            p.days = days.unwrap_or(p.days);
            p.events_per_day = events_per_day.unwrap_or(p.events_per_day);
            p.model_count = models.unwrap_or(p.model_count);
            p.overlap_prob = overlap.unwrap_or(p.overlap_prob);
            p.drift_rate = drift.unwrap_or(p.drift_rate);
            let w = generate(&p).map_err(anyhow::Error::msg)?;
            Workspace::create(&dir, &w)?;
            std::fs::write(dir.join("params.json"), serde_json::to_string_pretty(&p)?)?;
            print(&json!({
                "behaviors": w.catalog.behaviors().len(),
                "filters": w.catalog.filter_count(),
                "features": w.catalog.features().count(),
                "events": w.events.len(),
                "days": p.days,
            }));
        }
        Cmd::Ingest { dir, mode, through_day } => {
            let ws = Workspace::open(&dir)?;
            let until = through_day.map_or(i64::MAX, |d| (d as i64 + 1) * DAY_MS);
            let summary = ws.ingest(matches!(mode, Mode::Baseline), until)?;
            print(&serde_json::to_value(summary)?);
        }
        Cmd::Profile { dir } => {
            let ws = Workspace::open(&dir)?;
            let catalog = ws.catalog()?;
            let meta = profile(&ws.optimized_log()?, &catalog, &ws.config()?)?;
            std::fs::write(ws.path("profile.json"), meta.to_json())?;
            print(&json!({ "filters": meta.filters.len(), "filter_events": meta.total_filter_events() }));
        }
        Cmd::Optimize { dir, opts } => {
            let ws = Workspace::open(&dir)?;
            let catalog = ws.catalog()?;
            let meta = load_profile(&ws)?;
            let o = opts.options(false);
            let (merge, runs) = optimize_merge(&meta, o.model);
            let next = StorageConfig::new(&catalog, &merge, o.mode);
            next.save(ws.path("config.next.json"))?;
            let trace: Vec<_> = runs
                .iter()
                .map(|r| json!({ "behavior": r.behavior, "rounds": r.rounds, "iterations": r.iterations, "monotone": r.is_monotone() }))
                .collect();
            std::fs::write(ws.path("merge_trace.json"), serde_json::to_string_pretty(&trace)?)?;
            print(&json!({ "groups": next.schemas.len(), "shards": next.shards.len(), "config_bytes": next.serialized_bytes() }));
        }
        Cmd::Update { dir, check_rebuild } => {
            let ws = Workspace::open(&dir)?;
            let old = ws.config()?;
            let new = StorageConfig::load(ws.path("config.next.json")).context("run `optimize` first")?;
            let meta = load_profile(&ws)?;
            let mut log = ws.optimized_log()?;
            let t = Instant::now();
            let plan = plan_update(&old, &new, &meta, &log);
            let rebuilt = if check_rebuild { Some(rebuild(&old, &log, &new)?) } else { None };
            let io = execute_plan(&plan, &mut log)?;
            let elapsed = t.elapsed().as_secs_f64() * 1e3;
            let identical = rebuilt.as_ref().map(|(r, _)| canonical_images(r) == canonical_images(&log));
            log.save(ws.path("optimized"))?;
            new.save(ws.path("config.json"))?;
            std::fs::remove_file(ws.path("config.next.json"))?;
            print(&json!({
                "plan_empty": plan.is_empty(),
                "rebuilt_groups": plan.rebuild_count(),
                "io": io,
                "ops": io.ops(),
                "rebuild_io": rebuilt.as_ref().map(|(_, s)| s),
                "rebuild_identical": identical,
                "ms": elapsed,
            }));
            if identical == Some(false) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Compute { dir, feature, now, mode } => {
            let ws = Workspace::open(&dir)?;
            let catalog = ws.catalog()?;
            let (config, log) = open_log(&ws, mode)?;
            let v = evaluate(&catalog, FeatureId(feature), &config, &log, now)?;
            print(&serde_json::to_value(v)?);
        }
        Cmd::Stats { dir } => {
            let ws = Workspace::open(&dir)?;
            let catalog = ws.catalog()?;
            let config = ws.config()?;
            let base = ws.baseline_log()?;
            let opt = ws.optimized_log()?;
            let events = ws.events()?;
            let b = base.measure_sizes();
            let o = opt.measure_sizes();
            print(&json!({
                "baseline": { "sizes": b, "rows": base.row_count(), "disk_bytes": BehaviorLog::disk_bytes(ws.path("baseline"))? },
                "optimized": {
                    "sizes": o,
                    "rows": opt.row_count(),
                    "disk_bytes": BehaviorLog::disk_bytes(ws.path("optimized"))?,
                    "config_bytes": config.serialized_bytes(),
                    "groups": config.schemas.len(),
                    "shards": config.shards.len(),
                },
                "compression_ratio": behavlog::pipeline::compression_ratio(o.total_bytes + config.serialized_bytes(), b.total_bytes),
                "workload": calibrate_stats(&events, &catalog, &base),
            }));
        }
        Cmd::Verify { dir, features, now } => {
            let ws = Workspace::open(&dir)?;
            let mut catalog = ws.catalog()?;
            if features != "all" {
                let keep: Vec<u32> = features.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().context("--features")?;
                catalog.retain_features(|f| keep.contains(&f.0));
            }
            let state = ws.state()?;
            let nows = if now.is_empty() {
                let last = state.baseline_last.map_or(0, |(_, ts)| ts);
                default_checkpoints((last / DAY_MS) as u32 + 1)
            } else {
                now
            };
            let config = ws.config()?;
            let report = verify_features(&catalog, &StorageConfig::baseline(&catalog), &ws.baseline_log()?, &config, &ws.optimized_log()?, &nows)?;
            print(&json!({ "checked": report.checked, "mismatches": report.mismatches }));
            if !report.ok() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Pipeline { dir, days, check_rebuild, opts } => {
            let ws = Workspace::open(&dir)?;
            let catalog = ws.catalog()?;
            let total_days = match days {
                Some(d) => d,
                None => ws.events()?.last().map_or(0, |e| e.day() + 1),
            };
            let mut state = ws.state()?;
            let o = opts.options(check_rebuild);
            for day in state.nights..total_days {
                let until = (day as i64 + 1) * DAY_MS;
                ws.ingest(true, until)?;
                ws.ingest(false, until)?;
                let mut config = ws.config()?;
                let mut log = ws.optimized_log()?;
                let baseline = ws.baseline_log()?.measure_sizes();
                let out = run_pipeline(day, &catalog, &mut config, &mut log, baseline, o)?;
                log.save(ws.path("optimized"))?;
                config.save(ws.path("config.json"))?;
                std::fs::write(ws.path("profile.json"), out.meta.to_json())?;
                emit(&serde_json::to_string(&out.report)?);
                state = ws.state()?;
                state.nights = day + 1;
                ws.save_state(&state)?;
                if out.report.rebuild_identical == Some(false) {
                    bail!("day {day}: incremental update differs from rebuild");
                }
            }
        }
        Cmd::Bench { seed, seeds, preset } => {
            for s in seed..seed + seeds {
                let p = params(preset, s);
                let w = generate(&p).map_err(anyhow::Error::msg)?;
                let mut row = json!({ "seed": s, "filters": w.catalog.filter_count(), "events": w.events.len() });
                for (name, opts) in [
                    ("exact_vhan", PipelineOptions { check_rebuild: true, ..Default::default() }),
                    ("pairwise_vhan", PipelineOptions { model: WeightModel::Pairwise, check_rebuild: true, ..Default::default() }),
                    ("exact_unified", PipelineOptions { mode: SplitMode::Unified, check_rebuild: true, ..Default::default() }),
                ] {
                    let t = Instant::now();
                    let sim = Simulation::run(&w, p.days, opts)?;
                    let later = sim.reports.iter().skip(1);
                    let inc: u64 = later.clone().map(|r| r.io.ops()).sum();
                    let rb: u64 = later.filter_map(|r| r.rebuild_io).map(|s| s.ops()).sum();
                    row[name] = json!({
                        "compression_ratio": sim.compression_ratio(),
                        "ms": t.elapsed().as_secs_f64() * 1e3,
                        "incremental_ops": inc,
                        "rebuild_ops": rb,
                    });
                    if name == "exact_vhan" {
                        row["workload"] = serde_json::to_value(calibrate_stats(&w.events, &w.catalog, &sim.baseline))?;
                        row["verify_ok"] = json!(sim.verify(&default_checkpoints(p.days))?.ok());
                    }
                }
                emit(&serde_json::to_string(&row)?);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_profile(ws: &Workspace) -> Result<ProfileMetadata> {
    let text = std::fs::read_to_string(ws.path("profile.json")).context("run `profile` first")?;
    Ok(ProfileMetadata::from_json(&text)?)
}

fn open_log(ws: &Workspace, mode: Mode) -> Result<(StorageConfig, BehaviorLog)> {
    Ok(match mode {
        Mode::Baseline => (StorageConfig::baseline(&ws.catalog()?), ws.baseline_log()?),
        Mode::Optimized => (ws.config()?, ws.optimized_log()?),
    })
}
