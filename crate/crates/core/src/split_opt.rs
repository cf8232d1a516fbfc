//! Dense packing of heterogeneous rows by attribute count.
//!
//! Each row schema (a behavior, or a merged feature group of one behavior)
//! maps its attributes positionally onto virtual columns `0..k` and lands in
//! the shard for its attribute count `k`. Schemas with equal `k` share a
//! shard whatever their attribute names are, so no cell is structurally
//! null. Column widths are the maximum over everything mapped onto them.
//!
//! [`SplitMode::Unified`] is the physical-name layout: one wide shard with a
//! column per distinct attribute name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{AttributeDef, BehaviorId, Catalog};
use crate::logstore::ShardId;
use crate::value::{AttrKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Vhan,
    Unified,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("event lacks attribute `{0}`")]
    MissingAttribute(String),
    #[error("unknown behavior {0}")]
    UnknownBehavior(BehaviorId),
    #[error("row has {got} cells, mapping needs {needed}")]
    ShortRow { needed: usize, got: usize },
}

/// The cells one kind of row needs, in canonical attribute order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSchema {
    pub behavior: BehaviorId,
    pub attrs: Vec<AttributeDef>,
    pub slot_count: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardSpec {
    pub widths: Vec<u16>,
    pub slot_count: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnBinding {
    pub attr: String,
    pub kind: AttrKind,
    pub column: u16,
}

/// Physical attribute name to virtual column, for one schema.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeMapping {
    pub bindings: Vec<ColumnBinding>,
}

impl AttributeMapping {
    pub fn column_of(&self, attr: &str) -> Option<usize> {
        self.bindings.iter().find(|b| b.attr == attr).map(|b| b.column as usize)
    }

    pub fn binding(&self, attr: &str) -> Option<&ColumnBinding> {
        self.bindings.iter().find(|b| b.attr == attr)
    }

    /// Orders named values into a `k`-cell row.
    pub fn virtualize(&self, values: &BTreeMap<String, Value>, k: usize) -> Result<Vec<Option<Value>>, SplitError> {
        let mut cells = vec![None; k];
        for b in &self.bindings {
            let v = values.get(&b.attr).ok_or_else(|| SplitError::MissingAttribute(b.attr.clone()))?;
            cells[b.column as usize] = Some(v.clone());
        }
        Ok(cells)
    }

    pub fn devirtualize(&self, cells: &[Option<Value>]) -> Result<BTreeMap<String, Value>, SplitError> {
        let mut out = BTreeMap::new();
        for b in &self.bindings {
            let cell = cells.get(b.column as usize).ok_or(SplitError::ShortRow { needed: b.column as usize + 1, got: cells.len() })?;
            if let Some(v) = cell {
                out.insert(b.attr.clone(), v.clone());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub shard: ShardId,
    pub mapping: AttributeMapping,
}

/// Shard assignment for a list of schemas; `placements[i]` belongs to
/// `schemas[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub shards: BTreeMap<ShardId, ShardSpec>,
    pub placements: Vec<Placement>,
}

/// Places every schema. `physical` lists the unified columns (name, width)
/// and is only consulted in unified mode.
pub fn split_schemas(schemas: &[RowSchema], mode: SplitMode, physical: &[(String, u16)]) -> SplitConfig {
    let mut shards: BTreeMap<ShardId, ShardSpec> = BTreeMap::new();
    let mut placements = Vec::with_capacity(schemas.len());
    for s in schemas {
        let (shard, mapping) = match mode {
            SplitMode::Vhan => {
                let id = ShardId(s.attrs.len() as u32);
                let spec = shards.entry(id).or_insert_with(|| ShardSpec { widths: vec![0; s.attrs.len()], slot_count: 0 });
                let mut bindings = Vec::with_capacity(s.attrs.len());
                for (i, a) in s.attrs.iter().enumerate() {
                    spec.widths[i] = spec.widths[i].max(a.width);
                    bindings.push(ColumnBinding { attr: a.name.clone(), kind: a.kind, column: i as u16 });
                }
                spec.slot_count = spec.slot_count.max(s.slot_count);
                (id, AttributeMapping { bindings })
            }
            SplitMode::Unified => {
                let id = ShardId(physical.len() as u32);
                let spec = shards
                    .entry(id)
                    .or_insert_with(|| ShardSpec { widths: physical.iter().map(|c| c.1).collect(), slot_count: 0 });
                spec.slot_count = spec.slot_count.max(s.slot_count);
                let bindings = s
                    .attrs
                    .iter()
                    .map(|a| {
                        let column = physical.iter().position(|c| c.0 == a.name).expect("physical column for attribute");
                        ColumnBinding { attr: a.name.clone(), kind: a.kind, column: column as u16 }
                    })
                    .collect();
                (id, AttributeMapping { bindings })
            }
        };
        placements.push(Placement { shard, mapping });
    }
    SplitConfig { mode, shards, placements }
}

/// Behavior-level split of a whole catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSplit {
    pub shard_of: BTreeMap<BehaviorId, ShardId>,
    pub shards: BTreeMap<ShardId, ShardSpec>,
    pub mappings: BTreeMap<BehaviorId, AttributeMapping>,
}

impl BehaviorSplit {
    pub fn virtualize(&self, behavior: BehaviorId, values: &BTreeMap<String, Value>) -> Result<Vec<Option<Value>>, SplitError> {
        let m = self.mappings.get(&behavior).ok_or(SplitError::UnknownBehavior(behavior))?;
        let k = self.shards[&self.shard_of[&behavior]].widths.len();
        m.virtualize(values, k)
    }

    pub fn devirtualize(&self, behavior: BehaviorId, cells: &[Option<Value>]) -> Result<BTreeMap<String, Value>, SplitError> {
        self.mappings.get(&behavior).ok_or(SplitError::UnknownBehavior(behavior))?.devirtualize(cells)
    }
}

/// Splits the catalog with one schema per behavior (all its attributes).
pub fn build_split_config(catalog: &Catalog) -> BehaviorSplit {
    let schemas: Vec<RowSchema> = catalog
        .behaviors()
        .iter()
        .map(|b| RowSchema { behavior: b.behavior_id(), attrs: b.attrs.clone(), slot_count: 1 })
        .collect();
    let cfg = split_schemas(&schemas, SplitMode::Vhan, &[]);
    let mut shard_of = BTreeMap::new();
    let mut mappings = BTreeMap::new();
    for (s, p) in schemas.iter().zip(cfg.placements) {
        shard_of.insert(s.behavior, p.shard);
        mappings.insert(s.behavior, p.mapping);
    }
    BehaviorSplit { shard_of, shards: cfg.shards, mappings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::BehaviorType;

    fn attr(n: &str, kind: AttrKind, w: u16) -> AttributeDef {
        AttributeDef::new(n, kind, w)
    }

    fn catalog(counts: &[usize]) -> Catalog {
        let mut c = Catalog::new();
        for (i, &k) in counts.iter().enumerate() {
            let attrs = (0..k).map(|j| attr(&format!("b{i}a{j}"), AttrKind::Int64, 1 + (j % 8) as u16)).collect();
            c.register_behavior(BehaviorType::new(format!("beh{i}"), attrs)).unwrap();
        }
        c
    }

    #[test]
    fn one_shard_per_distinct_count() {
        let split = build_split_config(&catalog(&[2, 2, 3]));
        assert_eq!(split.shards.len(), 2);
        assert_eq!(split.shard_of[&BehaviorId(0)], ShardId(2));
        assert_eq!(split.shard_of[&BehaviorId(2)], ShardId(3));
    }

    #[test]
    fn different_names_share_columns() {
        let mut c = Catalog::new();
        c.register_behavior(BehaviorType::new(
            "video_play",
            vec![attr("duration", AttrKind::Int64, 8), attr("genre", AttrKind::Utf8, 16)],
        ))
        .unwrap();
        c.register_behavior(BehaviorType::new(
            "click",
            vec![attr("target", AttrKind::Utf8, 32), attr("pos", AttrKind::Int64, 4)],
        ))
        .unwrap();
        let split = build_split_config(&c);
        assert_eq!(split.shards.len(), 1);
        assert_eq!(split.shards[&ShardId(2)].widths, vec![32, 16]);
        for b in [BehaviorId(0), BehaviorId(1)] {
            let cols: Vec<u16> = split.mappings[&b].bindings.iter().map(|x| x.column).collect();
            assert_eq!(cols, vec![0, 1]);
        }

        let values: BTreeMap<String, Value> =
            [("duration".to_string(), Value::Int(12)), ("genre".to_string(), Value::Str("pop".into()))].into();
        let cells = split.virtualize(BehaviorId(0), &values).unwrap();
        assert_eq!(cells, vec![Some(Value::Int(12)), Some(Value::Str("pop".into()))]);
        assert_eq!(split.devirtualize(BehaviorId(0), &cells).unwrap(), values);
        assert_eq!(split.devirtualize(BehaviorId(9), &cells), Err(SplitError::UnknownBehavior(BehaviorId(9))));

        let partial: BTreeMap<String, Value> = [("duration".to_string(), Value::Int(1))].into();
        assert_eq!(split.virtualize(BehaviorId(0), &partial), Err(SplitError::MissingAttribute("genre".into())));
    }

    #[test]
    fn twenty_distinct_counts() {
        let counts: Vec<usize> = (0..250).map(|i| 1 + i % 20).collect();
        let split = build_split_config(&catalog(&counts));
        assert_eq!(split.shards.len(), 20);
    }

    #[test]
    fn unified_uses_physical_positions() {
        let schemas = vec![
            RowSchema { behavior: BehaviorId(0), attrs: vec![attr("b", AttrKind::Int64, 4)], slot_count: 1 },
            RowSchema { behavior: BehaviorId(1), attrs: vec![attr("a", AttrKind::Int64, 8)], slot_count: 3 },
        ];
        let phys = vec![("a".to_string(), 8), ("b".to_string(), 4)];
        let cfg = split_schemas(&schemas, SplitMode::Unified, &phys);
        assert_eq!(cfg.shards.len(), 1);
        assert_eq!(cfg.shards[&ShardId(2)], ShardSpec { widths: vec![8, 4], slot_count: 3 });
        assert_eq!(cfg.placements[0].mapping.column_of("b"), Some(1));
    }
}
