//! Deterministic synthetic catalogs and multi-day event streams.
//!
//! Behaviors draw their attributes from one shared pool, so attribute
//! counts are similar while names differ. Every behavior has a selector
//! attribute that filters test for equality. The overlap probability `p`
//! decides how often a new filter reuses the selector value of an earlier
//! filter on the same behavior (optionally narrowed by a second predicate)
//! rather than taking a value of its own; `p = 0` gives disjoint event sets.
//! Behavior popularity, for both events and filters, is Zipf-distributed and
//! daily event counts are Poisson.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::catalog::{
    AttributeDef, BehaviorId, BehaviorType, Catalog, Feature, FeatureFunc, Filter, FilterId, FilterRevision, Predicate, DAY_MS,
};
use crate::ingest::BehaviorEvent;
use crate::layout::StorageConfig;
use crate::logstore::BehaviorLog;
use crate::value::{AttrKind, Value};

/// Seed of the reference calibrated workload.
pub const CALIBRATION_SEED: u64 = 8;

const POOL: &[(&str, AttrKind, u16)] = &[
    ("source", AttrKind::Utf8, 12),
    ("page", AttrKind::Utf8, 16),
    ("item_id", AttrKind::Int64, 8),
    ("category", AttrKind::Utf8, 12),
    ("duration_ms", AttrKind::Int64, 4),
    ("position", AttrKind::Int64, 2),
    ("price", AttrKind::Float64, 8),
    ("rating", AttrKind::Float64, 8),
    ("is_new", AttrKind::Bool, 1),
    ("network", AttrKind::Utf8, 8),
    ("query", AttrKind::Utf8, 24),
    ("result_count", AttrKind::Int64, 2),
    ("volume", AttrKind::Int64, 1),
    ("is_ad", AttrKind::Bool, 1),
    ("scroll_depth", AttrKind::Int64, 2),
    ("author_id", AttrKind::Int64, 8),
    ("region", AttrKind::Utf8, 8),
    ("battery", AttrKind::Int64, 1),
    ("referrer", AttrKind::Utf8, 16),
    ("is_muted", AttrKind::Bool, 1),
    ("session_id", AttrKind::Int64, 8),
    ("screen", AttrKind::Utf8, 8),
    ("latency_ms", AttrKind::Int64, 4),
    ("score", AttrKind::Float64, 8),
    ("tag", AttrKind::Utf8, 12),
    ("is_fullscreen", AttrKind::Bool, 1),
    ("channel", AttrKind::Int64, 2),
    ("comment_len", AttrKind::Int64, 2),
];

const VERBS: &[&str] = &[
    "video_play", "click", "search", "like", "share", "comment", "scroll", "purchase", "add_to_cart", "follow", "login",
    "notification_open", "page_view", "download", "rate", "subscribe", "skip", "pause", "zoom", "swipe",
];

const WINDOWS_MS: &[i64] = &[3_600_000, 6 * 3_600_000, DAY_MS, 3 * DAY_MS, 7 * DAY_MS, 14 * DAY_MS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub seed: u64,
    pub behavior_count: usize,
    /// Distinct attribute names available to behaviors (≤ 28).
    pub attr_pool: usize,
    /// Inclusive bounds on attributes per behavior.
    pub attr_count_range: (usize, usize),
    pub model_count: usize,
    /// Inclusive bounds on filters per model.
    pub filters_per_model: (usize, usize),
    pub overlap_prob: f64,
    /// Fraction of a behavior's attributes a filter requires.
    pub required_frac: (f64, f64),
    /// Selector values no filter starts with.
    pub spare_values: usize,
    pub days: u32,
    /// Mean events per day (Poisson).
    pub events_per_day: f64,
    pub popularity_exponent: f64,
    /// Per-day probability that a filter's selector value changes.
    pub drift_rate: f64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self::calibrated(0)
    }
}

impl WorkloadParams {
    /// 20 models over 14 days, tuned to roughly two of three baseline rows
    /// being redundant and half of all baseline cells null.
    pub fn calibrated(seed: u64) -> Self {
        Self {
            seed,
            behavior_count: 24,
            attr_pool: 18,
            attr_count_range: (8, 14),
            model_count: 20,
            filters_per_model: (2, 4),
            overlap_prob: 0.85,
            required_frac: (0.6, 1.0),
            spare_values: 1,
            days: 14,
            events_per_day: 360.0,
            popularity_exponent: 0.8,
            drift_rate: 0.0,
        }
    }

    /// The calibrated workload with daily predicate drift.
    pub fn drifting(seed: u64) -> Self {
        Self { drift_rate: 0.02, ..Self::calibrated(seed) }
    }

    pub fn validate(&self) -> Result<(), String> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !prob(self.overlap_prob) || !prob(self.drift_rate) || !prob(self.required_frac.0) || !prob(self.required_frac.1) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if self.required_frac.0 > self.required_frac.1 {
            return Err("required_frac bounds are reversed".into());
        }
        if self.behavior_count == 0 || self.model_count == 0 || self.days == 0 || self.filters_per_model.0 == 0 {
            return Err("counts must be positive".into());
        }
        if self.attr_pool == 0 || self.attr_pool > POOL.len() {
            return Err(format!("attr_pool must be in 1..={}", POOL.len()));
        }
        let (lo, hi) = self.attr_count_range;
        if lo == 0 || lo > hi || hi > self.attr_pool {
            return Err("attr_count_range must satisfy 1 ≤ lo ≤ hi ≤ attr_pool".into());
        }
        if self.filters_per_model.0 > self.filters_per_model.1 {
            return Err("filters_per_model bounds are reversed".into());
        }
        if self.events_per_day <= 0.0 || self.popularity_exponent <= 0.0 {
            return Err("rates must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub catalog: Catalog,
    pub events: Vec<BehaviorEvent>,
}

impl Workload {
    pub fn events_of_day(&self, day: u32) -> &[BehaviorEvent] {
        let lo = self.events.partition_point(|e| e.ts < day as i64 * DAY_MS);
        let hi = self.events.partition_point(|e| e.ts < (day as i64 + 1) * DAY_MS);
        &self.events[lo..hi]
    }
}

struct BehaviorPlan {
    selector: String,
    selector_kind: AttrKind,
    domain: usize,
}

fn selector_value(kind: AttrKind, i: usize) -> Value {
    match kind {
        AttrKind::Int64 => Value::Int(i as i64),
        _ => Value::Str(format!("v{i}")),
    }
}

fn random_value(rng: &mut ChaCha8Rng, kind: AttrKind, width: u16) -> Value {
    match kind {
        AttrKind::Bool => Value::Bool(rng.random_bool(0.5)),
        AttrKind::Int64 => {
            let max = if width >= 4 { 1_000_000 } else { (1i64 << (8 * width as u32 - 1)) - 1 };
            Value::Int(rng.random_range(0..=max))
        }
        AttrKind::Float64 => Value::Float((rng.random_range(0.0..1000.0f64) * 100.0).round() / 100.0),
        AttrKind::Utf8 => {
            let len = rng.random_range(1..=width as usize);
            Value::Str((0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
        }
    }
}

pub fn generate(params: &WorkloadParams) -> Result<Workload, String> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let pool = &POOL[..params.attr_pool];
    let zipf = Zipf::new(params.behavior_count as f64, params.popularity_exponent).map_err(|e| e.to_string())?;
    let pick_behavior = |rng: &mut ChaCha8Rng| zipf.sample(rng) as usize - 1;

    let mut catalog = Catalog::new();
    let mut plans = Vec::with_capacity(params.behavior_count);
    for i in 0..params.behavior_count {
        let k = rng.random_range(params.attr_count_range.0..=params.attr_count_range.1);
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        if !idx.iter().any(|&j| matches!(pool[j].1, AttrKind::Int64 | AttrKind::Utf8)) {
            let j = (0..pool.len()).find(|j| matches!(pool[*j].1, AttrKind::Int64 | AttrKind::Utf8)).expect("pool has selectors");
            idx[0] = j;
        }
        let attrs: Vec<AttributeDef> = idx.iter().map(|&j| AttributeDef::new(pool[j].0, pool[j].1, pool[j].2)).collect();
        let sel = attrs.iter().find(|a| matches!(a.kind, AttrKind::Int64 | AttrKind::Utf8)).expect("selector");
        plans.push(BehaviorPlan { selector: sel.name.clone(), selector_kind: sel.kind, domain: 0 });
        let name = if i < VERBS.len() { VERBS[i].to_string() } else { format!("{}_{}", VERBS[i % VERBS.len()], i / VERBS.len()) };
        catalog.register_behavior(BehaviorType::new(name, attrs)).map_err(|e| e.to_string())?;
    }

    // Filters: each picks a behavior by popularity and either a fresh
    // selector value or, with probability p, an earlier filter's value.
    let mut current: BTreeMap<FilterId, Vec<Predicate>> = BTreeMap::new();
    for _ in 0..params.model_count {
        let n = rng.random_range(params.filters_per_model.0..=params.filters_per_model.1);
        for _ in 0..n {
            let b = pick_behavior(&mut rng);
            let bid = BehaviorId(b as u16);
            let def = catalog.behavior(bid).expect("registered").clone();
            let plan = &mut plans[b];
            let mut preds = Vec::new();
            if plan.domain > 0 && rng.random_bool(params.overlap_prob) {
                let v = rng.random_range(0..plan.domain);
                preds.push(Predicate::new(plan.selector.clone(), selector_value(plan.selector_kind, v)));
                if rng.random_bool(0.5) {
                    if let Some(flag) = def.attrs.iter().find(|a| a.kind == AttrKind::Bool) {
                        preds.push(Predicate::new(flag.name.clone(), Value::Bool(true)));
                    }
                }
            } else {
                let v = plan.domain;
                plan.domain += 1;
                preds.push(Predicate::new(plan.selector.clone(), selector_value(plan.selector_kind, v)));
            }
            let lo = ((def.attrs.len() as f64 * params.required_frac.0).round() as usize).max(1);
            let hi = ((def.attrs.len() as f64 * params.required_frac.1).round() as usize).clamp(lo, def.attrs.len());
            let r = rng.random_range(lo..=hi);
            let required: Vec<String> =
                rand::seq::index::sample(&mut rng, def.attrs.len(), r).into_iter().map(|i| def.attrs[i].name.clone()).collect();
            let id = catalog.register_filter(Filter::new(bid, preds.clone(), required.clone())).map_err(|e| e.to_string())?;
            current.insert(id, preds);

            let features = rng.random_range(1..=2);
            for _ in 0..features {
                let attr = required.choose(&mut rng).expect("non-empty").clone();
                let kind = def.attr(&attr).expect("declared").kind;
                let numeric = matches!(kind, AttrKind::Int64 | AttrKind::Float64);
                let func = match rng.random_range(0..6) {
                    0 => FeatureFunc::Count,
                    1 if numeric => FeatureFunc::Sum(attr),
                    2 if numeric => FeatureFunc::Avg(attr),
                    3 => FeatureFunc::Max(attr),
                    4 => FeatureFunc::Latest(attr),
                    _ => FeatureFunc::Sequence(attr),
                };
                let window = *WINDOWS_MS.choose(&mut rng).expect("non-empty");
                catalog.register_feature(Feature::new(id, window, func)).map_err(|e| e.to_string())?;
            }
        }
    }
    for p in &mut plans {
        p.domain += params.spare_values;
    }

    // Drift: a filter's selector value moves to another value of the domain.
    for day in 1..params.days {
        let ids: Vec<FilterId> = current.keys().copied().collect();
        for f in ids {
            if !rng.random_bool(params.drift_rate) {
                continue;
            }
            let b = catalog.filter(f).expect("registered").behavior.0 as usize;
            let plan = &plans[b];
            if plan.domain < 2 {
                continue;
            }
            let mut preds = current[&f].clone();
            let old = preds[0].value.clone();
            let mut v = selector_value(plan.selector_kind, rng.random_range(0..plan.domain));
            while v == old {
                v = selector_value(plan.selector_kind, rng.random_range(0..plan.domain));
            }
            preds[0].value = v;
            catalog.add_revision(FilterRevision { day, filter: f, predicates: preds.clone() }).map_err(|e| e.to_string())?;
            current.insert(f, preds);
        }
    }

    let poisson = Poisson::new(params.events_per_day).map_err(|e| e.to_string())?;
    let mut events = Vec::new();
    let mut seq = 1u64;
    for day in 0..params.days {
        let n = poisson.sample(&mut rng) as usize;
        let mut offsets: Vec<i64> = (0..n).map(|_| rng.random_range(0..DAY_MS)).collect();
        offsets.sort_unstable();
        for off in offsets {
            let b = pick_behavior(&mut rng);
            let def = catalog.behavior(BehaviorId(b as u16)).expect("registered");
            let plan = &plans[b];
            let mut values = BTreeMap::new();
            for a in &def.attrs {
                let v = if a.name == plan.selector {
                    selector_value(plan.selector_kind, rng.random_range(0..plan.domain.max(1)))
                } else {
                    random_value(&mut rng, a.kind, a.width)
                };
                values.insert(a.name.clone(), v);
            }
            events.push(BehaviorEvent { seq, behavior: BehaviorId(b as u16), ts: day as i64 * DAY_MS + off, values });
            seq += 1;
        }
    }
    Ok(Workload { catalog, events })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub events: u64,
    pub logged_events: u64,
    pub rows: u64,
    /// 1 − logged events / rows.
    pub redundancy: f64,
    /// Null cells over all cells of the unified table.
    pub null_share: f64,
    pub rows_with_null: f64,
}

/// Statistics of a baseline log, which must use `StorageConfig::baseline`.
pub fn calibrate_stats(events: &[BehaviorEvent], catalog: &Catalog, baseline: &BehaviorLog) -> WorkloadStats {
    let config = StorageConfig::baseline(catalog);
    let columns = catalog.physical_columns().len() as u64;
    let mut seqs = HashSet::new();
    let mut rows = 0u64;
    let mut nulls = 0u64;
    let mut with_null = 0u64;
    for shard in baseline.shards() {
        for r in shard.rows() {
            rows += 1;
            seqs.insert(r.seq_id());
            let f = r.slot(0);
            let filled = config.locate(f).map_or(0, |(s, _)| config.schemas[s].mapping.bindings.len() as u64);
            nulls += columns - filled;
            with_null += u64::from(filled < columns);
        }
    }
    let logged = seqs.len() as u64;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    WorkloadStats {
        events: events.len() as u64,
        logged_events: logged,
        rows,
        redundancy: if rows == 0 { 0.0 } else { 1.0 - ratio(logged, rows) },
        null_share: ratio(nulls, rows * columns),
        rows_with_null: ratio(with_null, rows),
    }
}
