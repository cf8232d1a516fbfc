//! On-disk behavior log: one shard file per attribute-count class.
//!
//! See `FORMAT.md` at the repository root for the byte layout. All sizes
//! reported by [`SizeReport`] are exact: `total_bytes` equals the length of
//! the file the shard serializes to.

mod shard;

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use shard::{EventRow, LogShard, RowRef};

use crate::value::CellError;

pub const MAGIC: &[u8; 4] = b"ADLG";
pub const FORMAT_VERSION: u16 = 1;
/// seq_id u64 + behavior_id u16 + timestamp i64.
pub const ROW_HEADER_BYTES: u64 = 18;
pub const SLOT_BYTES: u64 = 2;
/// Size of one physical row address in the index.
pub const ADDR_BYTES: u64 = 8;
/// Fixed per-shard header: identification, shape and the column-width table.
pub const SHARD_METADATA_BYTES: u64 = 256;
/// Column widths are stored as u16 from header offset 32.
pub const MAX_SHARD_COLUMNS: usize = (SHARD_METADATA_BYTES as usize - 32) / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShardId(pub u32);

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shard-{:05}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("shard {0} already exists")]
    ShardExists(ShardId),
    #[error("no shard {0}")]
    UnknownShard(ShardId),
    #[error("shard needs at least one cell and one slot column (got k={k}, slots={slot_count})")]
    InvalidShape { k: usize, slot_count: u16 },
    #[error("row has {got} cells, shard expects {expected}")]
    CellCountMismatch { expected: usize, got: usize },
    #[error("row has {got} slots, shard expects {expected}")]
    SlotCountMismatch { expected: usize, got: usize },
    #[error("cell {column}: {source}")]
    Cell { column: usize, source: CellError },
    #[error("encoded row is {got} bytes, shard rows are {expected}")]
    RowLength { expected: usize, got: usize },
    #[error("slot column {column} out of range (shard has {slot_count})")]
    UnknownColumn { column: usize, slot_count: u16 },
    #[error("shard is full")]
    ShardFull,
    #[error("bad shard header: {0}")]
    BadHeader(String),
    #[error("corrupt index in {shard}, column {column}: {detail}")]
    CorruptIndex { shard: ShardId, column: usize, detail: String },
    #[error("shard {shard} has shape {found}, layout wants {wanted}")]
    LayoutMismatch { shard: ShardId, found: String, wanted: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    /// True for the width-overflow family of cell errors.
    pub fn is_width_overflow(&self) -> bool {
        matches!(self, StoreError::Cell { source: CellError::WidthOverflow { .. }, .. })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub data_bytes: u64,
    pub index_address_bytes: u64,
    pub metadata_bytes: u64,
    pub total_bytes: u64,
}

impl SizeReport {
    pub fn new(data_bytes: u64, index_address_bytes: u64, metadata_bytes: u64) -> Self {
        Self { data_bytes, index_address_bytes, metadata_bytes, total_bytes: data_bytes + index_address_bytes + metadata_bytes }
    }
}

impl Add for SizeReport {
    type Output = SizeReport;

    fn add(self, rhs: SizeReport) -> SizeReport {
        SizeReport::new(
            self.data_bytes + rhs.data_bytes,
            self.index_address_bytes + rhs.index_address_bytes,
            self.metadata_bytes + rhs.metadata_bytes,
        )
    }
}

impl std::iter::Sum for SizeReport {
    fn sum<I: Iterator<Item = SizeReport>>(iter: I) -> Self {
        iter.fold(SizeReport::default(), Add::add)
    }
}

/// A whole log: the set of shards written under one storage layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BehaviorLog {
    shards: BTreeMap<ShardId, LogShard>,
}

impl BehaviorLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_shard(&mut self, id: ShardId, widths: Vec<u16>, slot_count: u16) -> Result<&mut LogShard, StoreError> {
        if self.shards.contains_key(&id) {
            return Err(StoreError::ShardExists(id));
        }
        let shard = LogShard::new(id, widths, slot_count)?;
        Ok(self.shards.entry(id).or_insert(shard))
    }

    pub fn shard(&self, id: ShardId) -> Option<&LogShard> {
        self.shards.get(&id)
    }

    pub fn shard_mut(&mut self, id: ShardId) -> Option<&mut LogShard> {
        self.shards.get_mut(&id)
    }

    pub fn shards(&self) -> impl Iterator<Item = &LogShard> {
        self.shards.values()
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn row_count(&self) -> usize {
        self.shards.values().map(LogShard::len).sum()
    }

    pub fn insert_shard(&mut self, shard: LogShard) {
        self.shards.insert(shard.id(), shard);
    }

    pub fn remove_shard(&mut self, id: ShardId) -> Option<LogShard> {
        self.shards.remove(&id)
    }

    pub fn measure_sizes(&self) -> SizeReport {
        self.shards.values().map(LogShard::measure_sizes).sum()
    }

    pub fn canonicalize(&mut self) {
        for s in self.shards.values_mut() {
            s.canonicalize();
        }
    }

    /// Serialized bytes of every shard, keyed by id.
    pub fn file_images(&self) -> BTreeMap<ShardId, Vec<u8>> {
        self.shards.iter().map(|(id, s)| (*id, s.to_bytes())).collect()
    }

    /// Content hash over every shard's bytes; changes whenever any row does.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (id, s) in &self.shards {
            id.hash(&mut h);
            s.widths().hash(&mut h);
            s.slot_count().hash(&mut h);
            for r in s.rows() {
                r.bytes().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Writes every shard to `dir/<shard-id>.adlg`, removing stale shard files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "adlg") {
                std::fs::remove_file(path)?;
            }
        }
        for (id, shard) in &self.shards {
            std::fs::write(dir.join(format!("{id}.adlg")), shard.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let mut log = BehaviorLog::new();
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "adlg"))
            .collect();
        paths.sort();
        for p in paths {
            let shard = LogShard::from_bytes(&std::fs::read(&p)?)?;
            log.shards.insert(shard.id(), shard);
        }
        Ok(log)
    }

    /// Sum of on-disk shard file lengths under `dir`.
    pub fn disk_bytes(dir: impl AsRef<Path>) -> Result<u64, StoreError> {
        let mut total = 0;
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if entry.path().extension().is_some_and(|e| e == "adlg") {
                total += entry.metadata()?.len();
            }
        }
        Ok(total)
    }
}
