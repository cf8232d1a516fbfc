//! The write path: filter matching and row emission.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::catalog::{BehaviorId, Catalog, FilterId, DAY_MS};
use crate::layout::StorageConfig;
use crate::logstore::{BehaviorLog, StoreError};
use crate::value::{CellError, Value};

/// One captured interaction. Serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub seq: u64,
    pub behavior: BehaviorId,
    pub ts: i64,
    pub values: BTreeMap<String, Value>,
}

impl BehaviorEvent {
    pub fn day(&self) -> u32 {
        self.ts.div_euclid(DAY_MS).max(0) as u32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unknown behavior {0}")]
    UnknownBehavior(BehaviorId),
    #[error("event {seq}: missing attribute `{attr}`")]
    MissingAttribute { seq: u64, attr: String },
    #[error("event {seq}: attribute `{attr}` is not declared by its behavior")]
    UndeclaredAttribute { seq: u64, attr: String },
    #[error("event {seq}: attribute `{attr}` expects {expected}, got {got}")]
    KindMismatch { seq: u64, attr: String, expected: String, got: String },
    #[error("event {seq}: attribute `{attr}`: {source}")]
    WidthOverflow { seq: u64, attr: String, source: CellError },
    #[error("event {seq} arrives out of order (after seq {prev_seq} at {prev_ts} ms)")]
    OutOfOrder { seq: u64, prev_seq: u64, prev_ts: i64 },
    #[error("storage config has no groups for behavior {0}")]
    ConfigMissingBehavior(BehaviorId),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("event stream line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checks an event against its behavior's declaration and coerces values
/// to the declared kinds.
pub fn validate_event(catalog: &Catalog, mut event: BehaviorEvent) -> Result<BehaviorEvent, IngestError> {
    let b = catalog.behavior(event.behavior).ok_or(IngestError::UnknownBehavior(event.behavior))?;
    if let Some(extra) = event.values.keys().find(|k| b.attr(k).is_none()) {
        return Err(IngestError::UndeclaredAttribute { seq: event.seq, attr: extra.clone() });
    }
    for a in &b.attrs {
        let v = event.values.remove(&a.name).ok_or_else(|| IngestError::MissingAttribute { seq: event.seq, attr: a.name.clone() })?;
        let got = v.kind();
        let v = a.kind.coerce(v).ok_or_else(|| IngestError::KindMismatch {
            seq: event.seq,
            attr: a.name.clone(),
            expected: a.kind.to_string(),
            got: got.to_string(),
        })?;
        if let Value::Str(s) = &v {
            if s.as_bytes().contains(&0) {
                return Err(IngestError::WidthOverflow { seq: event.seq, attr: a.name.clone(), source: CellError::EmbeddedNul });
            }
        }
        if !v.fits(a.width) {
            return Err(IngestError::WidthOverflow {
                seq: event.seq,
                attr: a.name.clone(),
                source: CellError::WidthOverflow { width: a.width as usize, needed: v.encoded_len() },
            });
        }
        event.values.insert(a.name.clone(), v);
    }
    Ok(event)
}

/// Filters of the event's behavior whose predicates, as in force on the
/// event's day, all hold. Ascending by id.
pub fn match_filters(catalog: &Catalog, event: &BehaviorEvent) -> Result<Vec<FilterId>, IngestError> {
    if catalog.behavior(event.behavior).is_none() {
        return Err(IngestError::UnknownBehavior(event.behavior));
    }
    let day = event.day();
    Ok(catalog
        .filters_of(event.behavior)
        .iter()
        .copied()
        .filter(|&f| {
            let preds = catalog.predicates_at(f, day).unwrap_or(&[]);
            preds.iter().all(|p| event.values.get(&p.attr) == Some(&p.value))
        })
        .collect())
}

/// Writes one row per schema of the event's behavior that has a matched
/// member. Returns the number of rows written.
pub fn write_event(
    event: &BehaviorEvent,
    matched: &[FilterId],
    config: &StorageConfig,
    log: &mut BehaviorLog,
) -> Result<usize, IngestError> {
    if matched.is_empty() {
        return Ok(0);
    }
    if !config.covers(event.behavior) {
        return Err(IngestError::ConfigMissingBehavior(event.behavior));
    }
    let mut written = 0;
    for &si in config.schemas_of(event.behavior) {
        let s = &config.schemas[si];
        let flags: Vec<bool> = s.members.iter().map(|f| matched.binary_search(f).is_ok()).collect();
        if !flags.iter().any(|&m| m) {
            continue;
        }
        let row = config
            .build_row(si, event.seq, event.ts, &flags, |a| event.values.get(a))
            .map_err(|attr| IngestError::MissingAttribute { seq: event.seq, attr })?;
        let shard = log.shard_mut(s.shard).ok_or(StoreError::UnknownShard(s.shard))?;
        shard.append_row(&row)?;
        written += 1;
    }
    Ok(written)
}

/// Baseline write: `config` must be [`StorageConfig::baseline`], which
/// yields one row per matched filter.
pub fn write_event_baseline(
    catalog: &Catalog,
    event: &BehaviorEvent,
    config: &StorageConfig,
    log: &mut BehaviorLog,
) -> Result<usize, IngestError> {
    let matched = match_filters(catalog, event)?;
    write_event(event, &matched, config, log)
}

pub fn write_event_optimized(
    catalog: &Catalog,
    event: &BehaviorEvent,
    config: &StorageConfig,
    log: &mut BehaviorLog,
) -> Result<usize, IngestError> {
    let matched = match_filters(catalog, event)?;
    write_event(event, &matched, config, log)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub events: u64,
    pub logged_events: u64,
    pub rows: u64,
}

/// Validating, order-checking ingest of a stream into one log.
pub struct Ingestor<'a> {
    catalog: &'a Catalog,
    config: &'a StorageConfig,
    last: Option<(u64, i64)>,
    pub summary: IngestSummary,
}

impl<'a> Ingestor<'a> {
    pub fn new(catalog: &'a Catalog, config: &'a StorageConfig) -> Self {
        Self { catalog, config, last: None, summary: IngestSummary::default() }
    }

    /// Continues after the given (seq, ts) position.
    pub fn resume_after(mut self, last: Option<(u64, i64)>) -> Self {
        self.last = last;
        self
    }

    pub fn push(&mut self, event: BehaviorEvent, log: &mut BehaviorLog) -> Result<usize, IngestError> {
        let event = validate_event(self.catalog, event)?;
        if let Some((prev_seq, prev_ts)) = self.last {
            if event.seq <= prev_seq || event.ts < prev_ts {
                return Err(IngestError::OutOfOrder { seq: event.seq, prev_seq, prev_ts });
            }
        }
        self.last = Some((event.seq, event.ts));
        let matched = match_filters(self.catalog, &event)?;
        let n = write_event(&event, &matched, self.config, log)?;
        self.summary.events += 1;
        self.summary.logged_events += u64::from(n > 0);
        self.summary.rows += n as u64;
        Ok(n)
    }

    pub fn last(&self) -> Option<(u64, i64)> {
        self.last
    }
}

pub fn read_events(reader: impl BufRead) -> Result<Vec<BehaviorEvent>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IngestError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_events(mut w: impl Write, events: &[BehaviorEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
