//! The nightly pipeline (profile, optimize, update), a multi-day driver
//! and the on-disk workspace used by the command-line tool.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, FeatureId, DAY_MS};
use crate::featcomp::{evaluate, FeatureError, FeatureValue};
use crate::ingest::{read_events, write_events, BehaviorEvent, IngestError, Ingestor};
use crate::layout::{ConfigError, StorageConfig};
use crate::logstore::{BehaviorLog, SizeReport, StoreError};
use crate::merge_opt::{optimize_merge, MergeRun, WeightModel};
use crate::profiler::{profile, ProfileMetadata};
use crate::split_opt::SplitMode;
use crate::updater::{canonical_images, execute_plan, plan_update, rebuild, IoStats, UpdateError};
use crate::workload::Workload;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Workspace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub model: WeightModel,
    pub mode: SplitMode,
    /// Also rebuild from scratch and compare against the incremental result.
    pub check_rebuild: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { model: WeightModel::Exact, mode: SplitMode::Vhan, check_rebuild: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub day: u32,
    pub before: SizeReport,
    pub after: SizeReport,
    pub baseline: SizeReport,
    pub config_bytes: u64,
    /// 1 − (optimized log + config) / baseline log.
    pub compression_ratio: f64,
    pub io: IoStats,
    pub rebuild_io: Option<IoStats>,
    pub rebuild_identical: Option<bool>,
    pub plan_empty: bool,
    pub rebuilt_groups: usize,
    pub behaviors: usize,
    pub behaviors_unchanged: usize,
    pub groups: usize,
    pub shards: usize,
    pub merge_monotone: bool,
    pub merge_within_bound: bool,
    pub profile_ms: f64,
    pub optimize_ms: f64,
    pub update_ms: f64,
    pub total_ms: f64,
}

pub fn compression_ratio(optimized_total: u64, baseline_total: u64) -> f64 {
    if baseline_total == 0 {
        0.0
    } else {
        1.0 - optimized_total as f64 / baseline_total as f64
    }
}

pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub runs: Vec<MergeRun>,
    pub meta: ProfileMetadata,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Profiles `log`, derives a new config and migrates the log to it.
pub fn run_pipeline(
    day: u32,
    catalog: &Catalog,
    config: &mut StorageConfig,
    log: &mut BehaviorLog,
    baseline: SizeReport,
    opts: PipelineOptions,
) -> Result<PipelineOutcome, PipelineError> {
    let start = Instant::now();
    let before = log.measure_sizes();

    let t = Instant::now();
    let meta = profile(log, catalog, config)?;
    let profile_ms = ms(t);

    let t = Instant::now();
    let (merge, runs) = optimize_merge(&meta, opts.model);
    let next = StorageConfig::new(catalog, &merge, opts.mode);
    let optimize_ms = ms(t);

    let t = Instant::now();
    let plan = plan_update(config, &next, &meta, log);
    let (rebuilt, rebuild_io) = if opts.check_rebuild {
        let (l, s) = rebuild(config, log, &next)?;
        (Some(l), Some(s))
    } else {
        (None, None)
    };
    let io = execute_plan(&plan, log)?;
    let update_ms = ms(t);
    let rebuild_identical = rebuilt.map(|r| canonical_images(&r) == canonical_images(log));

    let behaviors: Vec<_> = catalog.behaviors().iter().map(|b| b.behavior_id()).filter(|&b| !catalog.filters_of(b).is_empty()).collect();
    let behaviors_unchanged = behaviors.iter().filter(|&&b| config.merge.groups_of(b) == next.merge.groups_of(b)).count();
    let merge_monotone = runs.iter().all(MergeRun::is_monotone);
    let merge_within_bound = runs.iter().all(|r| {
        let n = meta.behaviors.get(&r.behavior).map_or(0, Vec::len);
        r.iterations.len() <= n && r.iterations.iter().map(|i| i.merged.len()).sum::<usize>() < n.max(1)
    });
    let after = log.measure_sizes();
    let config_bytes = next.serialized_bytes();
    let report = PipelineReport {
        day,
        before,
        after,
        baseline,
        config_bytes,
        compression_ratio: compression_ratio(after.total_bytes + config_bytes, baseline.total_bytes),
        io,
        rebuild_io,
        rebuild_identical,
        plan_empty: plan.is_empty(),
        rebuilt_groups: plan.rebuild_count(),
        behaviors: behaviors.len(),
        behaviors_unchanged,
        groups: next.schemas.len(),
        shards: next.shards.len(),
        merge_monotone,
        merge_within_bound,
        profile_ms,
        optimize_ms,
        update_ms,
        total_ms: ms(start),
    };
    *config = next;
    Ok(PipelineOutcome { report, runs, meta })
}

/// Baseline and optimized logs kept side by side over simulated days.
pub struct Simulation {
    pub catalog: Catalog,
    pub baseline_config: StorageConfig,
    pub baseline: BehaviorLog,
    pub config: StorageConfig,
    pub log: BehaviorLog,
    pub reports: Vec<PipelineReport>,
    pub runs: Vec<MergeRun>,
    baseline_last: Option<(u64, i64)>,
    log_last: Option<(u64, i64)>,
}

impl Simulation {
    pub fn new(catalog: Catalog) -> Self {
        let baseline_config = StorageConfig::baseline(&catalog);
        let config = StorageConfig::singletons(&catalog);
        Self {
            baseline: baseline_config.init_log(),
            log: config.init_log(),
            baseline_config,
            config,
            catalog,
            reports: Vec::new(),
            runs: Vec::new(),
            baseline_last: None,
            log_last: None,
        }
    }

    /// Ingests events into both logs under their current layouts.
    pub fn ingest(&mut self, events: &[BehaviorEvent]) -> Result<(), PipelineError> {
        let mut b = Ingestor::new(&self.catalog, &self.baseline_config).resume_after(self.baseline_last);
        for e in events {
            b.push(e.clone(), &mut self.baseline)?;
        }
        self.baseline_last = b.last();
        let mut o = Ingestor::new(&self.catalog, &self.config).resume_after(self.log_last);
        for e in events {
            o.push(e.clone(), &mut self.log)?;
        }
        self.log_last = o.last();
        Ok(())
    }

    pub fn nightly(&mut self, day: u32, opts: PipelineOptions) -> Result<&PipelineReport, PipelineError> {
        let out = run_pipeline(day, &self.catalog, &mut self.config, &mut self.log, self.baseline.measure_sizes(), opts)?;
        self.runs.extend(out.runs);
        self.reports.push(out.report);
        Ok(self.reports.last().expect("just pushed"))
    }

    /// Day-by-day: ingest the day's events, then run the pipeline.
    pub fn run(workload: &Workload, days: u32, opts: PipelineOptions) -> Result<Self, PipelineError> {
        let mut sim = Simulation::new(workload.catalog.clone());
        for day in 0..days {
            sim.ingest(workload.events_of_day(day))?;
            sim.nightly(day, opts)?;
        }
        Ok(sim)
    }

    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(self.log.measure_sizes().total_bytes + self.config.serialized_bytes(), self.baseline.measure_sizes().total_bytes)
    }

    pub fn verify(&self, nows: &[i64]) -> Result<VerifyReport, PipelineError> {
        verify_features(&self.catalog, &self.baseline_config, &self.baseline, &self.config, &self.log, nows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub feature: FeatureId,
    pub now_ms: i64,
    pub baseline: FeatureValue,
    pub optimized: FeatureValue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: u64,
    pub mismatches: Vec<Mismatch>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Evaluates every feature at every `now` on both layouts.
pub fn verify_features(
    catalog: &Catalog,
    baseline_config: &StorageConfig,
    baseline: &BehaviorLog,
    config: &StorageConfig,
    log: &BehaviorLog,
    nows: &[i64],
) -> Result<VerifyReport, PipelineError> {
    let mut report = VerifyReport::default();
    for feat in catalog.features() {
        let id = feat.feature_id();
        for &now in nows {
            let a = evaluate(catalog, id, baseline_config, baseline, now)?;
            let b = evaluate(catalog, id, config, log, now)?;
            report.checked += 1;
            if a != b {
                report.mismatches.push(Mismatch { feature: id, now_ms: now, baseline: a, optimized: b });
            }
        }
    }
    Ok(report)
}

/// Checkpoints spread over `days`: each day's end and midday.
pub fn default_checkpoints(days: u32) -> Vec<i64> {
    (0..days).flat_map(|d| [d as i64 * DAY_MS + DAY_MS / 2, (d as i64 + 1) * DAY_MS]).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub baseline_last: Option<(u64, i64)>,
    pub optimized_last: Option<(u64, i64)>,
    pub nights: u32,
}

/// A directory holding a catalog, an event stream, both logs and the
/// active config.
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.join("catalog.json").exists() {
            return Err(PipelineError::Workspace(format!("{} has no catalog.json; run `generate` first", dir.display())));
        }
        Ok(Self { dir })
    }

    pub fn create(dir: impl AsRef<Path>, workload: &Workload) -> Result<Self, PipelineError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        workload.catalog.save(dir.join("catalog.json"))?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("events.ndjson"))?);
        write_events(f, &workload.events)?;
        let ws = Self { dir };
        ws.reset_logs(&workload.catalog)?;
        Ok(ws)
    }

    /// Empties both logs and restores the unmerged config.
    pub fn reset_logs(&self, catalog: &Catalog) -> Result<(), PipelineError> {
        let config = StorageConfig::singletons(catalog);
        config.save(self.path("config.json"))?;
        StorageConfig::baseline(catalog).init_log().save(self.path("baseline"))?;
        config.init_log().save(self.path("optimized"))?;
        self.save_state(&WorkspaceState::default())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn catalog(&self) -> Result<Catalog, PipelineError> {
        Ok(Catalog::load(self.path("catalog.json"))?)
    }

    pub fn events(&self) -> Result<Vec<BehaviorEvent>, PipelineError> {
        let f = std::io::BufReader::new(std::fs::File::open(self.path("events.ndjson"))?);
        Ok(read_events(f)?)
    }

    pub fn config(&self) -> Result<StorageConfig, PipelineError> {
        Ok(StorageConfig::load(self.path("config.json"))?)
    }

    pub fn state(&self) -> Result<WorkspaceState, PipelineError> {
        let p = self.path("state.json");
        if !p.exists() {
            return Ok(WorkspaceState::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    pub fn save_state(&self, s: &WorkspaceState) -> Result<(), PipelineError> {
        std::fs::write(self.path("state.json"), serde_json::to_string_pretty(s)?)?;
        Ok(())
    }

    pub fn baseline_log(&self) -> Result<BehaviorLog, PipelineError> {
        Ok(BehaviorLog::load(self.path("baseline"))?)
    }

    pub fn optimized_log(&self) -> Result<BehaviorLog, PipelineError> {
        Ok(BehaviorLog::load(self.path("optimized"))?)
    }

    /// Ingests every not-yet-ingested event with `ts < until_ms` into one log.
    pub fn ingest(&self, baseline: bool, until_ms: i64) -> Result<crate::ingest::IngestSummary, PipelineError> {
        let catalog = self.catalog()?;
        let mut state = self.state()?;
        let (config, dir, last) = if baseline {
            (StorageConfig::baseline(&catalog), "baseline", state.baseline_last)
        } else {
            (self.config()?, "optimized", state.optimized_last)
        };
        let mut log = BehaviorLog::load(self.path(dir))?;
        config.check_log(&log)?;
        let mut ing = Ingestor::new(&catalog, &config).resume_after(last);
        for e in self.events()? {
            if e.ts >= until_ms {
                break;
            }
            if last.is_some_and(|(s, _)| e.seq <= s) {
                continue;
            }
            ing.push(e, &mut log)?;
        }
        log.save(self.path(dir))?;
        if baseline {
            state.baseline_last = ing.last();
        } else {
            state.optimized_last = ing.last();
        }
        self.save_state(&state)?;
        Ok(ing.summary)
    }
}
