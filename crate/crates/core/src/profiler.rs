//! Optimizer inputs collected from a log's indexes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{BehaviorId, Catalog, FilterId};
use crate::layout::StorageConfig;
use crate::logstore::{BehaviorLog, StoreError, ADDR_BYTES, SHARD_METADATA_BYTES};
use crate::seqset::SeqSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterProfile {
    pub behavior: BehaviorId,
    /// E(f): seq ids of the events logged for this filter.
    pub events: SeqSet,
    /// A(f): required attributes with their declared widths, canonical order.
    pub attrs: Vec<(String, u16)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileMetadata {
    pub filters: BTreeMap<FilterId, FilterProfile>,
    pub behaviors: BTreeMap<BehaviorId, Vec<FilterId>>,
    pub addr_bytes: u64,
    pub shard_overhead: u64,
}

impl ProfileMetadata {
    /// Metadata with the given event sets; attributes come from the catalog.
    pub fn from_sets(catalog: &Catalog, events: BTreeMap<FilterId, SeqSet>) -> Self {
        let mut filters = BTreeMap::new();
        let mut behaviors: BTreeMap<BehaviorId, Vec<FilterId>> = BTreeMap::new();
        for f in catalog.filters() {
            let id = f.filter_id();
            let attrs = f
                .required_attrs
                .iter()
                .map(|a| (a.clone(), catalog.attr_width(f.behavior, a).expect("validated attribute")))
                .collect();
            filters.insert(id, FilterProfile { behavior: f.behavior, events: events.get(&id).cloned().unwrap_or_default(), attrs });
            behaviors.entry(f.behavior).or_default().push(id);
        }
        Self { filters, behaviors, addr_bytes: ADDR_BYTES, shard_overhead: SHARD_METADATA_BYTES }
    }

    pub fn events(&self, f: FilterId) -> &SeqSet {
        &self.filters[&f].events
    }

    /// Σ|E(f)|: the row count of a one-row-per-filter log.
    pub fn total_filter_events(&self) -> u64 {
        self.filters.values().map(|p| p.events.len() as u64).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Collects E(f) for every filter from the slot-column indexes of `log`,
/// which is laid out by `config`. Every indexed row is checked to really
/// carry the filter in that column.
pub fn profile(log: &BehaviorLog, catalog: &Catalog, config: &StorageConfig) -> Result<ProfileMetadata, StoreError> {
    let mut sets = BTreeMap::new();
    for f in catalog.filters() {
        let id = f.filter_id();
        let Some((schema, column)) = config.locate(id) else {
            sets.insert(id, SeqSet::new());
            continue;
        };
        let shard_id = config.schemas[schema].shard;
        let shard = log.shard(shard_id).ok_or(StoreError::UnknownShard(shard_id))?;
        let behavior = config.schemas[schema].behavior;
        let mut seqs = Vec::new();
        for addr in shard.index_addresses(column, id) {
            let row = shard.row_at(addr).ok_or_else(|| StoreError::CorruptIndex {
                shard: shard_id,
                column,
                detail: format!("address {addr} is not a row"),
            })?;
            if row.slot(column) != id || row.behavior_id() != behavior {
                return Err(StoreError::CorruptIndex {
                    shard: shard_id,
                    column,
                    detail: format!("row at {addr} is indexed under {id} but holds {}", row.slot(column)),
                });
            }
            seqs.push(row.seq_id());
        }
        sets.insert(id, SeqSet::from_unsorted(seqs));
    }
    Ok(ProfileMetadata::from_sets(catalog, sets))
}
