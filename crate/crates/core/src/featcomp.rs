//! Feature computation over any storage layout.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Feature, FeatureFunc, FeatureId, FilterId};
use crate::layout::StorageConfig;
use crate::logstore::{BehaviorLog, StoreError};
use crate::value::{AttrKind, Value};

/// The attributes one filter logged for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRow {
    pub seq_id: u64,
    pub timestamp_ms: i64,
    pub values: Vec<(String, Value)>,
}

impl RetrievedRow {
    pub fn get(&self, attr: &str) -> Option<&Value> {
        self.values.iter().find(|(a, _)| a == attr).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum FeatureValue {
    Count(u64),
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Sequence(Vec<Value>),
    /// Aggregate over an empty window.
    Empty,
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("unknown feature {0}")]
    UnknownFeature(FeatureId),
    #[error("unknown filter {0}")]
    UnknownFilter(FilterId),
    #[error("storage config has no slot for {0}")]
    FilterNotInConfig(FilterId),
    #[error("{func} is not defined for `{attr}` of kind {kind}")]
    TypeMismatch { func: &'static str, attr: String, kind: AttrKind },
    #[error("row {seq} lacks attribute `{attr}`")]
    MissingValue { seq: u64, attr: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Rows logged for `filter` with timestamps in `window`, in seq order,
/// reduced to the filter's required attributes.
pub fn retrieve_filter(
    filter: FilterId,
    config: &StorageConfig,
    log: &BehaviorLog,
    window: Range<i64>,
) -> Result<Vec<RetrievedRow>, FeatureError> {
    let (schema, column) = config.locate(filter).ok_or(FeatureError::FilterNotInConfig(filter))?;
    let shard_id = config.schemas[schema].shard;
    let shard = log.shard(shard_id).ok_or(StoreError::UnknownShard(shard_id))?;
    Ok(shard
        .scan_by_slot(column, filter, window)?
        .into_iter()
        .map(|r| RetrievedRow { seq_id: r.seq_id(), timestamp_ms: r.timestamp_ms(), values: config.decode_for(schema, column, &r) })
        .collect())
}

/// Rows feeding a feature at time `now`: the window is `[now - w, now)`.
pub fn retrieve(
    catalog: &Catalog,
    feature: FeatureId,
    config: &StorageConfig,
    log: &BehaviorLog,
    now_ms: i64,
) -> Result<Vec<RetrievedRow>, FeatureError> {
    let feat = catalog.feature(feature).ok_or(FeatureError::UnknownFeature(feature))?;
    retrieve_filter(feat.filter, config, log, now_ms.saturating_sub(feat.window_ms)..now_ms)
}

pub fn compute(catalog: &Catalog, feature: &Feature, rows: &[RetrievedRow]) -> Result<FeatureValue, FeatureError> {
    let Some(attr) = feature.func.attr() else {
        return Ok(FeatureValue::Count(rows.len() as u64));
    };
    let filter = catalog.filter(feature.filter).ok_or(FeatureError::UnknownFilter(feature.filter))?;
    let kind = catalog
        .behavior(filter.behavior)
        .and_then(|b| b.attr(attr))
        .map(|a| a.kind)
        .ok_or(FeatureError::UnknownFilter(feature.filter))?;
    let mut ordered: Vec<&RetrievedRow> = rows.iter().collect();
    ordered.sort_by_key(|r| r.seq_id);
    let values = ordered
        .iter()
        .map(|r| r.get(attr).ok_or_else(|| FeatureError::MissingValue { seq: r.seq_id, attr: attr.to_string() }))
        .collect::<Result<Vec<&Value>, _>>()?;
    let mismatch = |func| FeatureError::TypeMismatch { func, attr: attr.to_string(), kind };

    Ok(match &feature.func {
        FeatureFunc::Count => unreachable!("count has no attribute"),
        FeatureFunc::Sum(_) => match kind {
            AttrKind::Int64 => FeatureValue::Int(values.iter().map(|v| as_int(v)).fold(0i64, i64::wrapping_add)),
            AttrKind::Float64 => FeatureValue::Float(values.iter().map(|v| as_float(v)).sum()),
            _ => return Err(mismatch("sum")),
        },
        FeatureFunc::Avg(_) => {
            if values.is_empty() {
                return match kind {
                    AttrKind::Int64 | AttrKind::Float64 => Ok(FeatureValue::Empty),
                    _ => Err(mismatch("avg")),
                };
            }
            let n = values.len() as f64;
            match kind {
                AttrKind::Int64 => FeatureValue::Float(values.iter().map(|v| as_int(v) as i128).sum::<i128>() as f64 / n),
                AttrKind::Float64 => FeatureValue::Float(values.iter().map(|v| as_float(v)).sum::<f64>() / n),
                _ => return Err(mismatch("avg")),
            }
        }
        FeatureFunc::Max(_) => match values.iter().copied().reduce(|a, b| if greater(b, a) { b } else { a }) {
            None => FeatureValue::Empty,
            Some(v) => scalar(v.clone()),
        },
        FeatureFunc::Latest(_) => values.last().map_or(FeatureValue::Empty, |v| scalar((*v).clone())),
        FeatureFunc::Sequence(_) => FeatureValue::Sequence(values.into_iter().cloned().collect()),
    })
}

/// Retrieves and computes in one step.
pub fn evaluate(
    catalog: &Catalog,
    feature: FeatureId,
    config: &StorageConfig,
    log: &BehaviorLog,
    now_ms: i64,
) -> Result<FeatureValue, FeatureError> {
    let feat = catalog.feature(feature).ok_or(FeatureError::UnknownFeature(feature))?;
    let rows = retrieve(catalog, feature, config, log, now_ms)?;
    compute(catalog, feat, &rows)
}

fn as_int(v: &Value) -> i64 {
    match v {
        Value::Int(i) => *i,
        _ => 0,
    }
}

fn as_float(v: &Value) -> f64 {
    match v {
        Value::Float(x) => *x,
        Value::Int(i) => *i as f64,
        _ => 0.0,
    }
}

fn greater(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x > y,
        (Value::Float(x), Value::Float(y)) => x.total_cmp(y).is_gt(),
        (Value::Bool(x), Value::Bool(y)) => x > y,
        (Value::Str(x), Value::Str(y)) => x > y,
        _ => false,
    }
}

fn scalar(v: Value) -> FeatureValue {
    match v {
        Value::Int(i) => FeatureValue::Int(i),
        Value::Float(x) => FeatureValue::Float(x),
        Value::Bool(b) => FeatureValue::Bool(b),
        Value::Str(s) => FeatureValue::Str(s),
    }
}
