//! Incremental migration of a log from one storage config to the next.
//!
//! Old and new groups of each behavior are paired by a maximum-weight
//! bipartite matching on shared event rows. A paired old group's rows are
//! shrunk to the events both groups hold and then expanded with the new
//! group's remaining events and attributes. New groups without a usable
//! partner are rebuilt from the log; old groups left over are dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{BehaviorId, FilterId};
use crate::featcomp::{retrieve_filter, FeatureError};
use crate::layout::StorageConfig;
use crate::logstore::{BehaviorLog, EventRow, LogShard, ShardId, StoreError};
use crate::matching::max_weight_bipartite;
use crate::profiler::ProfileMetadata;
use crate::seqset::SeqSet;
use crate::value::{decode_cell, Value};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoStats {
    pub rows_read: u64,
    pub rows_written: u64,
    pub rows_deleted: u64,
    /// Rows rewritten in place (cell prune/add, slot change or reshape).
    pub rows_modified: u64,
    pub cells_rewritten: u64,
}

impl IoStats {
    /// Row-level operations performed.
    pub fn ops(&self) -> u64 {
        self.rows_read + self.rows_written + self.rows_deleted + self.rows_modified
    }

    pub fn is_zero(&self) -> bool {
        *self == IoStats::default()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum UpdateError {
    #[error("log changed since the plan was made")]
    PlanStale,
    #[error("no old row holds `{attr}` for event {seq}")]
    MissingSource { seq: u64, attr: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Old groups (left) against new groups (right) of one behavior, weighted
/// by shared events. Indices are schema indices of the two configs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    pub behavior: BehaviorId,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// (left position, right position, |E(g) ∩ E(g')|), zero weights omitted.
    pub edges: Vec<(usize, usize, i64)>,
}

pub fn group_events(cfg: &StorageConfig, schema: usize, meta: &ProfileMetadata) -> SeqSet {
    cfg.schemas[schema]
        .members
        .iter()
        .filter_map(|f| meta.filters.get(f))
        .fold(SeqSet::new(), |acc, p| acc.union(&p.events))
}

pub fn build_bipartite(old: &StorageConfig, new: &StorageConfig, meta: &ProfileMetadata, behavior: BehaviorId) -> BipartiteGraph {
    let left = old.schemas_of(behavior).to_vec();
    let right = new.schemas_of(behavior).to_vec();
    let le: Vec<SeqSet> = left.iter().map(|&s| group_events(old, s, meta)).collect();
    let re: Vec<SeqSet> = right.iter().map(|&s| group_events(new, s, meta)).collect();
    let mut edges = Vec::new();
    for (i, a) in le.iter().enumerate() {
        for (j, b) in re.iter().enumerate() {
            let w = a.intersection_len(b) as i64;
            if w > 0 {
                edges.push((i, j, w));
            }
        }
    }
    BipartiteGraph { behavior, left, right, edges }
}

/// Exact maximum-weight one-to-one mapping, as (old schema, new schema).
pub fn match_groups(g: &BipartiteGraph) -> Vec<(usize, usize)> {
    max_weight_bipartite(g.left.len(), g.right.len(), &g.edges)
        .into_iter()
        .map(|(l, r)| (g.left[l], g.right[r]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum GroupAction {
    ShrinkExpand {
        old: usize,
        new: usize,
        keep: SeqSet,
        delete: SeqSet,
        insert: SeqSet,
        prune_attrs: Vec<String>,
        add_attrs: Vec<String>,
    },
    Rebuild {
        new: usize,
        events: SeqSet,
    },
    Drop {
        old: usize,
        events: SeqSet,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdatePlan {
    pub fingerprint: u64,
    pub actions: Vec<GroupAction>,
    pub old_config: StorageConfig,
    pub new_config: StorageConfig,
}

impl UpdatePlan {
    /// True when the new config is the old one and nothing needs doing.
    pub fn is_empty(&self) -> bool {
        self.old_config == self.new_config
    }

    pub fn rebuild_count(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, GroupAction::Rebuild { .. })).count()
    }

    /// Pairs whose old and new groups have the same members.
    pub fn unchanged_groups(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| match a {
                GroupAction::ShrinkExpand { old, new, .. } => {
                    self.old_config.schemas[*old].members == self.new_config.schemas[*new].members
                }
                _ => false,
            })
            .count()
    }
}

pub fn plan_update(old: &StorageConfig, new: &StorageConfig, meta: &ProfileMetadata, log: &BehaviorLog) -> UpdatePlan {
    let behaviors: BTreeSet<BehaviorId> =
        old.schemas.iter().chain(&new.schemas).map(|s| s.behavior).collect();
    let mut actions = Vec::new();
    for b in behaviors {
        let graph = build_bipartite(old, new, meta, b);
        let pairs: HashMap<usize, usize> = match_groups(&graph).into_iter().map(|(o, n)| (n, o)).collect();
        let mut used_old = HashSet::new();
        for &n in &graph.right {
            let en = group_events(new, n, meta);
            match pairs.get(&n) {
                Some(&o) if old.schemas[o].shard == new.schemas[n].shard => {
                    used_old.insert(o);
                    let eo = group_events(old, o, meta);
                    let old_attrs: BTreeSet<&str> = old.schemas[o].attr_names().collect();
                    let new_attrs: BTreeSet<&str> = new.schemas[n].attr_names().collect();
                    actions.push(GroupAction::ShrinkExpand {
                        old: o,
                        new: n,
                        keep: eo.intersection(&en),
                        delete: eo.difference(&en),
                        insert: en.difference(&eo),
                        prune_attrs: old_attrs.difference(&new_attrs).map(|s| s.to_string()).collect(),
                        add_attrs: new_attrs.difference(&old_attrs).map(|s| s.to_string()).collect(),
                    });
                }
                _ => actions.push(GroupAction::Rebuild { new: n, events: en }),
            }
        }
        for &o in &graph.left {
            if !used_old.contains(&o) {
                actions.push(GroupAction::Drop { old: o, events: group_events(old, o, meta) });
            }
        }
    }
    UpdatePlan { fingerprint: log.fingerprint(), actions, old_config: old.clone(), new_config: new.clone() }
}

/// Read access to the pre-update log with read accounting.
struct Sources<'a> {
    cfg: &'a StorageConfig,
    log: &'a BehaviorLog,
    /// Per old schema: seq id → row ordinal.
    rows_of: Vec<HashMap<u64, u32>>,
    reads: HashSet<(ShardId, u32)>,
}

impl<'a> Sources<'a> {
    fn new(cfg: &'a StorageConfig, log: &'a BehaviorLog) -> Result<Self, StoreError> {
        let mut rows_of = Vec::with_capacity(cfg.schemas.len());
        for s in &cfg.schemas {
            let shard = log.shard(s.shard).ok_or(StoreError::UnknownShard(s.shard))?;
            let mut m = HashMap::new();
            for (c, &f) in s.members.iter().enumerate() {
                for a in shard.index_addresses(c, f) {
                    let r = shard.row_at(a).ok_or_else(|| StoreError::CorruptIndex {
                        shard: s.shard,
                        column: c,
                        detail: format!("address {a} is not a row"),
                    })?;
                    m.insert(r.seq_id(), r.ordinal());
                }
            }
            rows_of.push(m);
        }
        Ok(Self { cfg, log, rows_of, reads: HashSet::new() })
    }

    fn shard(&self, schema: usize) -> &'a LogShard {
        self.log.shard(self.cfg.schemas[schema].shard).expect("checked at construction")
    }

    /// Whether filter `f` logged event `seq`.
    fn matched(&mut self, f: FilterId, seq: u64) -> bool {
        let Some((h, c)) = self.cfg.locate(f) else { return false };
        let Some(&o) = self.rows_of[h].get(&seq) else { return false };
        self.reads.insert((self.cfg.schemas[h].shard, o));
        self.shard(h).row(o).slot(c) == f
    }

    fn timestamp(&mut self, behavior: BehaviorId, seq: u64) -> Option<i64> {
        for &h in self.cfg.schemas_of(behavior) {
            if let Some(&o) = self.rows_of[h].get(&seq) {
                self.reads.insert((self.cfg.schemas[h].shard, o));
                return Some(self.shard(h).row(o).timestamp_ms());
            }
        }
        None
    }

    /// The value of `attr` from any old row that logged it for `seq`.
    fn value(&mut self, behavior: BehaviorId, seq: u64, attr: &str, skip: Option<usize>) -> Option<Value> {
        for &h in self.cfg.schemas_of(behavior) {
            if Some(h) == skip {
                continue;
            }
            let Some(&o) = self.rows_of[h].get(&seq) else { continue };
            if let Some(v) = filled_value(self.cfg, h, &self.shard(h).row(o), attr) {
                self.reads.insert((self.cfg.schemas[h].shard, o));
                return Some(v);
            }
        }
        None
    }
}

/// Value of `attr` in a row of `schema` if a matched member logged it.
fn filled_value(cfg: &StorageConfig, schema: usize, row: &crate::logstore::RowRef<'_>, attr: &str) -> Option<Value> {
    let s = &cfg.schemas[schema];
    let p = s.mapping.bindings.iter().position(|b| b.attr == attr)? as u16;
    let logged = s.members.iter().enumerate().any(|(i, &f)| row.slot(i) == f && s.needs[i].contains(&p));
    logged.then(|| {
        let b = &s.mapping.bindings[p as usize];
        decode_cell(row.cell(b.column as usize), b.kind)
    })
}

/// Assembles the new row of schema `n` for one event from the old log.
/// `own` is the old row being transformed, if any.
fn assemble(
    src: &mut Sources<'_>,
    new: &StorageConfig,
    n: usize,
    seq: u64,
    own: Option<(usize, u32)>,
) -> Result<EventRow, UpdateError> {
    let s = &new.schemas[n];
    let old = src.cfg;
    let mut flags = Vec::with_capacity(s.members.len());
    for &f in &s.members {
        let m = match own {
            Some((o, ord)) if old.schemas[o].members.contains(&f) => {
                let c = old.schemas[o].members.iter().position(|&x| x == f).expect("member");
                src.shard(o).row(ord).slot(c) == f
            }
            _ => src.matched(f, seq),
        };
        flags.push(m);
    }
    let ts = match own {
        Some((o, ord)) => src.shard(o).row(ord).timestamp_ms(),
        None => src.timestamp(s.behavior, seq).ok_or(UpdateError::MissingSource { seq, attr: "timestamp".into() })?,
    };
    let mut values: BTreeMap<String, Value> = BTreeMap::new();
    for (i, &m) in flags.iter().enumerate() {
        if !m {
            continue;
        }
        for &p in &s.needs[i] {
            let attr = &s.mapping.bindings[p as usize].attr;
            if values.contains_key(attr) {
                continue;
            }
            let from_own = own.and_then(|(o, ord)| filled_value(old, o, &src.shard(o).row(ord), attr));
            let v = match from_own {
                Some(v) => v,
                None => src
                    .value(s.behavior, seq, attr, own.map(|x| x.0))
                    .ok_or_else(|| UpdateError::MissingSource { seq, attr: attr.clone() })?,
            };
            values.insert(attr.clone(), v);
        }
    }
    new.build_row(n, seq, ts, &flags, |a| values.get(a))
        .map_err(|attr| UpdateError::MissingSource { seq, attr })
}

/// Applies a plan to the log it was made for.
pub fn execute_plan(plan: &UpdatePlan, log: &mut BehaviorLog) -> Result<IoStats, UpdateError> {
    if log.fingerprint() != plan.fingerprint {
        return Err(UpdateError::PlanStale);
    }
    if plan.is_empty() {
        return Ok(IoStats::default());
    }
    let old = &plan.old_config;
    let new = &plan.new_config;
    old.check_log(log)?;
    let mut stats = IoStats::default();
    let mut out = BehaviorLog::new();
    let mut src = Sources::new(old, log)?;

    for (&sid, spec) in &new.shards {
        let reuse = log.shard(sid).is_some_and(|s| s.widths() == spec.widths.as_slice() && s.slot_count() == spec.slot_count);
        let mut shard = if reuse {
            log.shard(sid).expect("checked").clone()
        } else {
            LogShard::new(sid, spec.widths.clone(), spec.slot_count)?
        };
        let ranges = shard.field_ranges();
        let mut delete_ords: HashSet<u32> = HashSet::new();

        for action in &plan.actions {
            match action {
                GroupAction::ShrinkExpand { old: o, new: n, delete, insert, .. } if new.schemas[*n].shard == sid => {
                    let mut rows: Vec<(u64, u32)> = src.rows_of[*o].iter().map(|(&s, &r)| (s, r)).collect();
                    rows.sort_by_key(|r| r.1);
                    for (seq, ord) in rows {
                        if delete.contains(seq) {
                            stats.rows_deleted += 1;
                            delete_ords.insert(ord);
                            continue;
                        }
                        let target = assemble(&mut src, new, *n, seq, Some((*o, ord)))?;
                        if reuse {
                            let bytes = shard.encode(&target)?;
                            let current = shard.row(ord).bytes();
                            if bytes != current {
                                stats.rows_modified += 1;
                                stats.cells_rewritten += ranges.iter().filter(|r| bytes[(*r).clone()] != current[(*r).clone()]).count() as u64;
                                src.reads.insert((sid, ord));
                                shard.replace_row(ord, &target)?;
                            }
                        } else {
                            stats.rows_modified += 1;
                            stats.cells_rewritten += ranges.len() as u64;
                            src.reads.insert((old.schemas[*o].shard, ord));
                            shard.append_row(&target)?;
                        }
                    }
                    for seq in insert.iter() {
                        let row = assemble(&mut src, new, *n, seq, None)?;
                        shard.append_row(&row)?;
                        stats.rows_written += 1;
                    }
                }
                GroupAction::Rebuild { new: n, events } if new.schemas[*n].shard == sid => {
                    for seq in events.iter() {
                        let row = assemble(&mut src, new, *n, seq, None)?;
                        shard.append_row(&row)?;
                        stats.rows_written += 1;
                    }
                }
                GroupAction::Drop { old: o, .. } if reuse && old.schemas[*o].shard == sid => {
                    delete_ords.extend(src.rows_of[*o].values().copied());
                }
                _ => {}
            }
        }
        if reuse && !delete_ords.is_empty() {
            shard.retain(|r| !delete_ords.contains(&r.ordinal()));
        }
        out.insert_shard(shard);
    }
    for action in &plan.actions {
        if let GroupAction::Drop { old: o, .. } = action {
            stats.rows_deleted += src.rows_of[*o].len() as u64;
        }
    }
    stats.rows_read = src.reads.len() as u64;
    *log = out;
    Ok(stats)
}

/// From-scratch reconstruction under `new`, using only what each filter
/// can retrieve from the old log. Reads every old row once and writes
/// every new row.
pub fn rebuild(old: &StorageConfig, log: &BehaviorLog, new: &StorageConfig) -> Result<(BehaviorLog, IoStats), UpdateError> {
    struct Logged {
        behavior: BehaviorId,
        ts: i64,
        filters: Vec<FilterId>,
        values: BTreeMap<String, Value>,
    }
    let mut events: BTreeMap<u64, Logged> = BTreeMap::new();
    for s in &old.schemas {
        for &f in &s.members {
            for r in retrieve_filter(f, old, log, i64::MIN..i64::MAX)? {
                let e = events.entry(r.seq_id).or_insert_with(|| Logged {
                    behavior: s.behavior,
                    ts: r.timestamp_ms,
                    filters: Vec::new(),
                    values: BTreeMap::new(),
                });
                e.filters.push(f);
                e.values.extend(r.values);
            }
        }
    }
    let mut out = new.init_log();
    let mut written = 0;
    for (&seq, e) in &events {
        for &si in new.schemas_of(e.behavior) {
            let s = &new.schemas[si];
            let flags: Vec<bool> = s.members.iter().map(|f| e.filters.contains(f)).collect();
            if !flags.iter().any(|&m| m) {
                continue;
            }
            let row = new
                .build_row(si, seq, e.ts, &flags, |a| e.values.get(a))
                .map_err(|attr| UpdateError::MissingSource { seq, attr })?;
            out.shard_mut(s.shard).expect("init_log creates every shard").append_row(&row)?;
            written += 1;
        }
    }
    let stats = IoStats { rows_read: log.row_count() as u64, rows_written: written, ..IoStats::default() };
    Ok((out, stats))
}

/// Canonical byte images of a log, for equality checks.
pub fn canonical_images(log: &BehaviorLog) -> BTreeMap<ShardId, Vec<u8>> {
    let mut c = log.clone();
    c.canonicalize();
    c.file_images()
}
