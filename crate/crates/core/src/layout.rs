//! A complete storage layout: merge groups, their shard placement and the
//! virtual column mapping of every group.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{AttributeDef, BehaviorId, Catalog, FilterId};
use crate::logstore::{BehaviorLog, EventRow, RowRef, ShardId, StoreError};
use crate::merge_opt::{FeatureGroup, MergeConfig};
use crate::split_opt::{split_schemas, AttributeMapping, RowSchema, ShardSpec, SplitMode};
use crate::value::{decode_cell, Value};

/// One row schema: a feature group and where its rows live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaLayout {
    pub behavior: BehaviorId,
    pub members: Vec<FilterId>,
    pub shard: ShardId,
    /// The union of the members' required attributes, canonical order.
    pub mapping: AttributeMapping,
    /// Per member, positions in `mapping.bindings` it requires.
    pub needs: Vec<Vec<u16>>,
}

impl SchemaLayout {
    pub fn attr_names(&self) -> impl Iterator<Item = &str> {
        self.mapping.bindings.iter().map(|b| b.attr.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorageConfig {
    pub mode: SplitMode,
    pub merge: MergeConfig,
    pub shards: BTreeMap<ShardId, ShardSpec>,
    pub schemas: Vec<SchemaLayout>,
    #[serde(skip)]
    by_filter: HashMap<FilterId, (usize, usize)>,
    #[serde(skip)]
    by_behavior: BTreeMap<BehaviorId, Vec<usize>>,
}

impl PartialEq for StorageConfig {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.merge == other.merge && self.shards == other.shards && self.schemas == other.schemas
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config does not match the catalog: {0}")]
    Mismatch(String),
}

impl StorageConfig {
    /// Lays out `merge` over the catalog. Filters the merge config does not
    /// mention get singleton groups.
    pub fn new(catalog: &Catalog, merge: &MergeConfig, mode: SplitMode) -> Self {
        let mut merge = merge.clone();
        for b in catalog.behaviors() {
            let bid = b.behavior_id();
            let missing: Vec<FilterId> =
                catalog.filters_of(bid).iter().copied().filter(|f| !merge.groups_of(bid).iter().any(|g| g.members.contains(f))).collect();
            if !missing.is_empty() {
                let groups = merge.behaviors.entry(bid).or_default();
                groups.extend(missing.into_iter().map(|f| FeatureGroup { members: vec![f] }));
                groups.sort_by(|a, b| a.members.cmp(&b.members));
            }
        }

        let mut schemas = Vec::new();
        let mut row_schemas = Vec::new();
        let mut needs_all = Vec::new();
        for (&bid, groups) in &merge.behaviors {
            let behavior = catalog.behavior(bid).expect("merge config behavior in catalog");
            for g in groups {
                let attrs: Vec<AttributeDef> = behavior
                    .attrs
                    .iter()
                    .filter(|a| g.members.iter().any(|&f| catalog.filter(f).is_some_and(|f| f.required_attrs.contains(&a.name))))
                    .cloned()
                    .collect();
                let needs: Vec<Vec<u16>> = g
                    .members
                    .iter()
                    .map(|&f| {
                        let req = &catalog.filter(f).expect("member filter in catalog").required_attrs;
                        attrs.iter().enumerate().filter(|(_, a)| req.contains(&a.name)).map(|(i, _)| i as u16).collect()
                    })
                    .collect();
                row_schemas.push(RowSchema { behavior: bid, attrs, slot_count: g.members.len() as u16 });
                schemas.push((bid, g.members.clone()));
                needs_all.push(needs);
            }
        }
        let physical = catalog.physical_columns();
        let split = split_schemas(&row_schemas, mode, &physical);
        let schemas = schemas
            .into_iter()
            .zip(split.placements)
            .zip(needs_all)
            .map(|(((behavior, members), p), needs)| SchemaLayout { behavior, members, shard: p.shard, mapping: p.mapping, needs })
            .collect();
        let mut cfg = StorageConfig { mode, merge, shards: split.shards, schemas, by_filter: HashMap::new(), by_behavior: BTreeMap::new() };
        cfg.reindex();
        cfg
    }

    /// The industry layout: one unified sparse table, one row per matched
    /// filter.
    pub fn baseline(catalog: &Catalog) -> Self {
        Self::new(catalog, &MergeConfig::singletons(catalog), SplitMode::Unified)
    }

    /// Dense layout without any merging.
    pub fn singletons(catalog: &Catalog) -> Self {
        Self::new(catalog, &MergeConfig::singletons(catalog), SplitMode::Vhan)
    }

    fn reindex(&mut self) {
        self.by_filter.clear();
        self.by_behavior.clear();
        for (i, s) in self.schemas.iter().enumerate() {
            self.by_behavior.entry(s.behavior).or_default().push(i);
            for (c, &f) in s.members.iter().enumerate() {
                self.by_filter.insert(f, (i, c));
            }
        }
    }

    /// (schema index, slot column) of a filter.
    pub fn locate(&self, f: FilterId) -> Option<(usize, usize)> {
        self.by_filter.get(&f).copied()
    }

    pub fn schemas_of(&self, b: BehaviorId) -> &[usize] {
        self.by_behavior.get(&b).map_or(&[], Vec::as_slice)
    }

    pub fn covers(&self, b: BehaviorId) -> bool {
        self.by_behavior.contains_key(&b)
    }

    pub fn k(&self, shard: ShardId) -> usize {
        self.shards[&shard].widths.len()
    }

    /// An empty log with every shard of this layout.
    pub fn init_log(&self) -> BehaviorLog {
        let mut log = BehaviorLog::new();
        for (&id, spec) in &self.shards {
            log.create_shard(id, spec.widths.clone(), spec.slot_count).expect("layout shapes are valid");
        }
        log
    }

    /// Errors unless `log` has exactly this layout's shards and shapes.
    pub fn check_log(&self, log: &BehaviorLog) -> Result<(), StoreError> {
        for (&id, spec) in &self.shards {
            let s = log.shard(id).ok_or(StoreError::UnknownShard(id))?;
            if s.widths() != spec.widths.as_slice() || s.slot_count() != spec.slot_count {
                return Err(StoreError::LayoutMismatch {
                    shard: id,
                    found: format!("{:?}x{}", s.widths(), s.slot_count()),
                    wanted: format!("{:?}x{}", spec.widths, spec.slot_count),
                });
            }
        }
        if let Some(extra) = log.shards().find(|s| !self.shards.contains_key(&s.id())) {
            return Err(StoreError::LayoutMismatch { shard: extra.id(), found: "present".into(), wanted: "absent".into() });
        }
        Ok(())
    }

    /// The row a schema stores for one event. `matched[i]` says whether
    /// member `i` matched; a cell is filled only if a matched member
    /// requires it.
    pub fn build_row<'v>(
        &self,
        schema: usize,
        seq_id: u64,
        timestamp_ms: i64,
        matched: &[bool],
        mut value: impl FnMut(&str) -> Option<&'v Value>,
    ) -> Result<EventRow, String> {
        let s = &self.schemas[schema];
        let spec = &self.shards[&s.shard];
        let mut cells = vec![None; spec.widths.len()];
        let mut slots = vec![FilterId::NULL; spec.slot_count as usize];
        for (i, &m) in matched.iter().enumerate() {
            if !m {
                continue;
            }
            slots[i] = s.members[i];
            for &p in &s.needs[i] {
                let b = &s.mapping.bindings[p as usize];
                let col = b.column as usize;
                if cells[col].is_none() {
                    cells[col] = Some(value(&b.attr).ok_or_else(|| b.attr.clone())?.clone());
                }
            }
        }
        Ok(EventRow { seq_id, behavior_id: s.behavior, timestamp_ms, cells, slots })
    }

    /// Decodes the attributes a member filter requires from one row.
    pub fn decode_for(&self, schema: usize, member: usize, row: &RowRef<'_>) -> Vec<(String, Value)> {
        let s = &self.schemas[schema];
        s.needs[member]
            .iter()
            .map(|&p| {
                let b = &s.mapping.bindings[p as usize];
                (b.attr.clone(), decode_cell(row.cell(b.column as usize), b.kind))
            })
            .collect()
    }

    /// Members of a schema whose slot is set in `row`.
    pub fn matched_members(&self, schema: usize, row: &RowRef<'_>) -> Vec<bool> {
        let s = &self.schemas[schema];
        s.members.iter().enumerate().map(|(i, &f)| row.slot(i) == f).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: StorageConfig = serde_json::from_str(text)?;
        for s in &cfg.schemas {
            if !cfg.shards.contains_key(&s.shard) {
                return Err(ConfigError::Mismatch(format!("schema references missing {}", s.shard)));
            }
            if s.needs.len() != s.members.len() {
                return Err(ConfigError::Mismatch(format!("schema of {} has ragged needs", s.behavior)));
            }
        }
        cfg.reindex();
        Ok(cfg)
    }

    /// Bytes of the serialized config, charged against the optimized log.
    pub fn serialized_bytes(&self) -> u64 {
        self.to_json().len() as u64
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Distinct attribute counts over all schemas.
    pub fn distinct_attr_counts(&self) -> usize {
        let mut ks: Vec<usize> = self.schemas.iter().map(|s| s.mapping.bindings.len()).collect();
        ks.sort_unstable();
        ks.dedup();
        ks.len()
    }
}
