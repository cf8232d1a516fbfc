#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use behavlog::catalog::{AttributeDef, BehaviorId, BehaviorType, Catalog, FilterId};
use behavlog::ingest::{BehaviorEvent, Ingestor};
use behavlog::layout::StorageConfig;
use behavlog::logstore::BehaviorLog;
use behavlog::profiler::ProfileMetadata;
use behavlog::value::{AttrKind, Value};

pub fn behavior(name: &str, attrs: &[(&str, AttrKind, u16)]) -> BehaviorType {
    BehaviorType::new(name, attrs.iter().map(|&(n, k, w)| AttributeDef::new(n, k, w)).collect())
}

pub fn event(seq: u64, b: BehaviorId, ts: i64, values: &[(&str, Value)]) -> BehaviorEvent {
    BehaviorEvent { seq, behavior: b, ts, values: values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect() }
}

pub fn s(x: &str) -> Value {
    Value::Str(x.to_string())
}

pub fn ingest_all(catalog: &Catalog, config: &StorageConfig, events: &[BehaviorEvent]) -> BehaviorLog {
    let mut log = config.init_log();
    let mut ing = Ingestor::new(catalog, config);
    for e in events {
        ing.push(e.clone(), &mut log).expect("ingest");
    }
    log
}

/// E(f) by evaluating predicates directly against the raw events.
pub fn oracle_event_sets(catalog: &Catalog, events: &[BehaviorEvent]) -> BTreeMap<FilterId, BTreeSet<u64>> {
    let mut out: BTreeMap<FilterId, BTreeSet<u64>> = catalog.filters().map(|f| (f.filter_id(), BTreeSet::new())).collect();
    for e in events {
        for f in catalog.filters().filter(|f| f.behavior == e.behavior) {
            let preds = catalog.predicates_at(f.filter_id(), (e.ts / behavlog::catalog::DAY_MS) as u32).unwrap();
            if preds.iter().all(|p| e.values.get(&p.attr).is_some_and(|v| *v == p.value)) {
                out.get_mut(&f.filter_id()).unwrap().insert(e.seq);
            }
        }
    }
    out
}

/// (filter, seq, ts, required attribute values) for every match, straight from the events.
pub fn oracle_pairs(catalog: &Catalog, events: &[BehaviorEvent]) -> BTreeSet<(FilterId, u64, i64, String)> {
    let sets = oracle_event_sets(catalog, events);
    let by_seq: BTreeMap<u64, &BehaviorEvent> = events.iter().map(|e| (e.seq, e)).collect();
    let mut out = BTreeSet::new();
    for (f, seqs) in sets {
        let filter = catalog.filter(f).unwrap();
        for seq in seqs {
            let e = by_seq[&seq];
            let vals: Vec<String> = filter.required_attrs.iter().map(|a| format!("{a}={:?}", e.values[a])).collect();
            out.insert((f, seq, e.ts, vals.join(";")));
        }
    }
    out
}

/// The same tuples, read back through a layout.
pub fn retrieved_pairs(catalog: &Catalog, config: &StorageConfig, log: &BehaviorLog) -> BTreeSet<(FilterId, u64, i64, String)> {
    let mut out = BTreeSet::new();
    for f in catalog.filters() {
        let id = f.filter_id();
        for r in behavlog::featcomp::retrieve_filter(id, config, log, i64::MIN..i64::MAX).unwrap() {
            let vals: Vec<String> = f
                .required_attrs
                .iter()
                .map(|a| format!("{a}={:?}", r.get(a).unwrap_or_else(|| panic!("{id} row {} lacks {a}", r.seq_id))))
                .collect();
            assert_eq!(r.values.len(), f.required_attrs.len(), "{id} retrieves only its required attributes");
            out.insert((id, r.seq_id, r.timestamp_ms, vals.join(";")));
        }
    }
    out
}

/// Best total weight over all matchings, by exhaustive recursion.
pub fn brute_matching(n: usize, edges: &[(usize, usize, i64)]) -> i64 {
    fn go(i: usize, used: &mut Vec<bool>, edges: &[(usize, usize, i64)]) -> i64 {
        if i == edges.len() {
            return 0;
        }
        let mut best = go(i + 1, used, edges);
        let (u, v, w) = edges[i];
        if u != v && !used[u] && !used[v] {
            used[u] = true;
            used[v] = true;
            best = best.max(w + go(i + 1, used, edges));
            used[u] = false;
            used[v] = false;
        }
        best
    }
    go(0, &mut vec![false; n], edges)
}

/// Best assignment weight on a bipartite graph by trying every injection.
pub fn brute_bipartite(left: usize, right: usize, edges: &[(usize, usize, i64)]) -> i64 {
    let mut w = vec![vec![0i64; right]; left];
    for &(l, r, x) in edges {
        w[l][r] = w[l][r].max(x);
    }
    fn go(l: usize, used: &mut Vec<bool>, w: &[Vec<i64>]) -> i64 {
        if l == w.len() {
            return 0;
        }
        let mut best = go(l + 1, used, w);
        for r in 0..used.len() {
            if !used[r] && w[l][r] > 0 {
                used[r] = true;
                best = best.max(w[l][r] + go(l + 1, used, w));
                used[r] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; right], &w)
}

/// Every set partition of `items`.
pub fn set_partitions<T: Clone>(items: &[T]) -> Vec<Vec<Vec<T>>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let (first, rest) = (&items[0], &items[1..]);
    let mut out = Vec::new();
    for p in set_partitions(rest) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].insert(0, first.clone());
            out.push(q);
        }
        let mut q = p.clone();
        q.insert(0, vec![first.clone()]);
        out.push(q);
    }
    out
}

/// Modeled cost of a partition, from plain set arithmetic:
/// Σ |∪E| × (Σ widths of ∪A + addr × |g|).
pub fn oracle_partition_cost(meta: &ProfileMetadata, groups: &[Vec<FilterId>]) -> u64 {
    groups
        .iter()
        .map(|g| {
            let events: BTreeSet<u64> = g.iter().flat_map(|f| meta.filters[f].events.iter()).collect();
            let attrs: BTreeMap<&str, u16> =
                g.iter().flat_map(|f| meta.filters[f].attrs.iter().map(|(a, w)| (a.as_str(), *w))).collect();
            let width: u64 = attrs.values().map(|&w| w as u64).sum();
            events.len() as u64 * (width + meta.addr_bytes * g.len() as u64)
        })
        .sum()
}
