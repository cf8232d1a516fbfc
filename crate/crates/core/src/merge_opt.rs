//! Feature-level merging.
//!
//! Filters of one behavior are grouped so that an event matched by several
//! filters of a group is stored once, in a row carrying the union of their
//! attributes and one slot column per member. Groups are found by repeated
//! pairwise merging: each round builds a graph over the current groups
//! weighted by the bytes a merge saves, takes an exact maximum-weight
//! matching, and merges every matched pair. Merging stops when no pair saves
//! anything.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{BehaviorId, Catalog, FilterId};
use crate::matching::max_weight_matching;
use crate::profiler::ProfileMetadata;
use crate::seqset::SeqSet;

/// A candidate group with its cached event and attribute sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStats {
    pub behavior: BehaviorId,
    pub members: Vec<FilterId>,
    pub events: SeqSet,
    pub attrs: BTreeMap<String, u16>,
}

impl GroupStats {
    pub fn singleton(meta: &ProfileMetadata, f: FilterId) -> Self {
        let p = &meta.filters[&f];
        Self {
            behavior: p.behavior,
            members: vec![f],
            events: p.events.clone(),
            attrs: p.attrs.iter().cloned().collect(),
        }
    }

    pub fn from_members(meta: &ProfileMetadata, members: &[FilterId]) -> Self {
        let mut g = Self::singleton(meta, members[0]);
        for &f in &members[1..] {
            g = g.union(&Self::singleton(meta, f));
        }
        g
    }

    pub fn union(&self, other: &GroupStats) -> GroupStats {
        let mut members: Vec<FilterId> = self.members.iter().chain(&other.members).copied().collect();
        members.sort_unstable();
        let mut attrs = self.attrs.clone();
        for (a, w) in &other.attrs {
            attrs.insert(a.clone(), *w);
        }
        GroupStats { behavior: self.behavior, members, events: self.events.union(&other.events), attrs }
    }

    /// Bytes of one row's attribute cells.
    pub fn attr_size(&self) -> u64 {
        self.attrs.values().map(|&w| w as u64).sum()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn group_data_size(g: &GroupStats) -> u64 {
    g.events.len() as u64 * g.attr_size()
}

pub fn group_index_size(g: &GroupStats, addr_bytes: u64, max_group_size: usize) -> u64 {
    debug_assert!(max_group_size >= g.len());
    g.events.len() as u64 * addr_bytes * max_group_size as u64
}

/// Modeled bytes of a group priced with its own slot count.
pub fn group_cost(g: &GroupStats, addr_bytes: u64) -> u64 {
    group_data_size(g) + group_index_size(g, addr_bytes, g.len())
}

pub fn modeled_size(groups: &[GroupStats], addr_bytes: u64) -> u64 {
    groups.iter().map(|g| group_cost(g, addr_bytes)).sum()
}

/// Net savings of merging two groups, estimated from the shared events
/// times the shared attribute bytes, minus the extra index addresses.
pub fn edge_weight(g1: &GroupStats, g2: &GroupStats, addr_bytes: u64) -> i64 {
    let common = g1.events.intersection_len(&g2.events) as i64;
    let union_size: u64 = {
        let mut attrs = g1.attrs.clone();
        attrs.extend(g2.attrs.iter().map(|(a, w)| (a.clone(), *w)));
        attrs.values().map(|&w| w as u64).sum()
    };
    let data = common * (g1.attr_size() as i64 + g2.attr_size() as i64 - union_size as i64);
    let e1 = g1.events.len() as i64;
    let e2 = g2.events.len() as i64;
    let eu = e1 + e2 - common;
    let n1 = g1.len() as i64;
    let n2 = g2.len() as i64;
    let index = (eu * (n1 + n2) - (e1 * n1 + e2 * n2)) * addr_bytes as i64;
    data - index
}

/// Exact change of the modeled size when two groups merge.
pub fn merge_gain(g1: &GroupStats, g2: &GroupStats, addr_bytes: u64) -> i64 {
    let merged = g1.union(g2);
    group_cost(g1, addr_bytes) as i64 + group_cost(g2, addr_bytes) as i64 - group_cost(&merged, addr_bytes) as i64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightModel {
    /// Exact difference of the modeled size.
    #[default]
    Exact,
    /// Intersection-based estimate from [`edge_weight`].
    Pairwise,
}

impl WeightModel {
    pub fn weight(self, g1: &GroupStats, g2: &GroupStats, addr_bytes: u64) -> i64 {
        match self {
            WeightModel::Exact => merge_gain(g1, g2, addr_bytes),
            WeightModel::Pairwise => edge_weight(g1, g2, addr_bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeIteration {
    pub merged: Vec<(Vec<FilterId>, Vec<FilterId>)>,
    pub objective_before: u64,
    pub objective_after: u64,
}

#[derive(Debug, Clone)]
pub struct MergeRun {
    pub behavior: BehaviorId,
    pub groups: Vec<GroupStats>,
    /// Rounds that merged at least one pair.
    pub iterations: Vec<MergeIteration>,
    /// Matchings computed, including the final empty one.
    pub rounds: usize,
}

impl MergeRun {
    pub fn is_monotone(&self) -> bool {
        self.iterations.iter().all(|it| it.objective_after <= it.objective_before)
    }
}

/// Hierarchical merging of one behavior's filters.
pub fn hierarchical_merge(meta: &ProfileMetadata, behavior: BehaviorId, model: WeightModel) -> MergeRun {
    let addr = meta.addr_bytes;
    let mut groups: Vec<GroupStats> = meta
        .behaviors
        .get(&behavior)
        .map(|fs| fs.iter().map(|&f| GroupStats::singleton(meta, f)).collect())
        .unwrap_or_default();
    let mut iterations = Vec::new();
    let mut rounds = 0;
    while groups.len() > 1 {
        rounds += 1;
        let mut edges = Vec::new();
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let w = model.weight(&groups[i], &groups[j], addr);
                if w > 0 {
                    edges.push((i, j, w));
                }
            }
        }
        let matching = max_weight_matching(groups.len(), &edges);
        if matching.is_empty() {
            break;
        }
        let before = modeled_size(&groups, addr);
        let mut taken = vec![false; groups.len()];
        let mut next = Vec::with_capacity(groups.len() - matching.len());
        let mut merged = Vec::with_capacity(matching.len());
        for &(i, j) in &matching {
            taken[i] = true;
            taken[j] = true;
            merged.push((groups[i].members.clone(), groups[j].members.clone()));
            next.push(groups[i].union(&groups[j]));
        }
        next.extend(groups.iter().enumerate().filter(|(i, _)| !taken[*i]).map(|(_, g)| g.clone()));
        next.sort_by(|a, b| a.members.cmp(&b.members));
        groups = next;
        let after = modeled_size(&groups, addr);
        iterations.push(MergeIteration { merged, objective_before: before, objective_after: after });
    }
    MergeRun { behavior, groups, iterations, rounds }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    /// Member `i` occupies slot column `i`.
    pub members: Vec<FilterId>,
}

/// Groups per behavior. Behaviors without filters are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub behaviors: BTreeMap<BehaviorId, Vec<FeatureGroup>>,
}

impl MergeConfig {
    /// Every filter in its own group.
    pub fn singletons(catalog: &Catalog) -> Self {
        let mut behaviors = BTreeMap::new();
        for b in catalog.behaviors() {
            let fs = catalog.filters_of(b.behavior_id());
            if !fs.is_empty() {
                behaviors.insert(b.behavior_id(), fs.iter().map(|&f| FeatureGroup { members: vec![f] }).collect());
            }
        }
        Self { behaviors }
    }

    pub fn groups_of(&self, b: BehaviorId) -> &[FeatureGroup] {
        self.behaviors.get(&b).map_or(&[], Vec::as_slice)
    }

    /// (behavior, group index, slot column) of a filter.
    pub fn slot_of(&self, f: FilterId) -> Option<(BehaviorId, usize, usize)> {
        self.behaviors.iter().find_map(|(b, gs)| {
            gs.iter().enumerate().find_map(|(gi, g)| g.members.iter().position(|&m| m == f).map(|c| (*b, gi, c)))
        })
    }

    pub fn max_group_size(&self) -> usize {
        self.behaviors.values().flatten().map(|g| g.members.len()).max().unwrap_or(0)
    }

    pub fn group_count(&self) -> usize {
        self.behaviors.values().map(Vec::len).sum()
    }
}

pub fn build_merge_config(runs: &[MergeRun]) -> MergeConfig {
    let mut behaviors = BTreeMap::new();
    for r in runs {
        if r.groups.is_empty() {
            continue;
        }
        let mut groups: Vec<FeatureGroup> = r.groups.iter().map(|g| FeatureGroup { members: g.members.clone() }).collect();
        groups.sort_by(|a, b| a.members.cmp(&b.members));
        behaviors.insert(r.behavior, groups);
    }
    MergeConfig { behaviors }
}

/// Runs hierarchical merging for every profiled behavior in parallel.
pub fn optimize_merge(meta: &ProfileMetadata, model: WeightModel) -> (MergeConfig, Vec<MergeRun>) {
    let behaviors: Vec<BehaviorId> = meta.behaviors.keys().copied().collect();
    let runs: Vec<MergeRun> = behaviors.par_iter().map(|&b| hierarchical_merge(meta, b, model)).collect();
    (build_merge_config(&runs), runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(events: &[u64], attrs: &[(&str, u16)], members: &[u16]) -> GroupStats {
        GroupStats {
            behavior: BehaviorId(0),
            members: members.iter().map(|&m| FilterId(m)).collect(),
            events: events.iter().copied().collect(),
            attrs: attrs.iter().map(|(a, w)| (a.to_string(), *w)).collect(),
        }
    }

    #[test]
    fn data_size_of_union() {
        let f1 = g(&[1, 2, 3], &[("a", 8), ("b", 8)], &[1]);
        let f2 = g(&[2, 3, 4], &[("b", 8), ("c", 4)], &[2]);
        assert_eq!(group_data_size(&f1.union(&f2)), 80);
        assert_eq!(group_data_size(&f1), 48);
        assert_eq!(group_data_size(&g(&[], &[("a", 8)], &[1])), 0);
    }

    #[test]
    fn index_size() {
        let u = g(&[1, 2, 3, 4], &[("a", 1)], &[1, 2]);
        assert_eq!(group_index_size(&u, 8, 2), 64);
        assert_eq!(group_index_size(&g(&[1, 2, 3, 4], &[], &[1]), 8, 1), 32);
        assert_eq!(group_index_size(&g(&[], &[], &[1]), 8, 1), 0);
    }

    #[test]
    fn edge_weight_cases() {
        let a = g(&[1, 2, 3], &[("x", 16)], &[1]);
        let b = g(&[1, 2, 3], &[("x", 16)], &[2]);
        assert_eq!(edge_weight(&a, &b, 8), 48);

        let c = g(&[1, 2, 3], &[("x", 8)], &[1]);
        let d = g(&[2, 3, 4], &[("x", 8)], &[2]);
        assert_eq!(edge_weight(&c, &d, 8), 0);

        let e = g(&[1], &[("x", 8)], &[1]);
        let f = g(&[2], &[("y", 8)], &[2]);
        assert_eq!(edge_weight(&e, &f, 8), -16);
    }

    #[test]
    fn exact_gain_agrees_when_attrs_equal() {
        let c = g(&[1, 2, 3], &[("x", 8)], &[1]);
        let d = g(&[2, 3, 4], &[("x", 8)], &[2]);
        assert_eq!(merge_gain(&c, &d, 8), edge_weight(&c, &d, 8));
    }
}
