use std::collections::BTreeMap;
use std::ops::Range;

use crate::catalog::{BehaviorId, FilterId};
use crate::value::encode_cell;

use super::{
    ShardId, SizeReport, StoreError, ADDR_BYTES, FORMAT_VERSION, MAGIC, MAX_SHARD_COLUMNS, ROW_HEADER_BYTES,
    SHARD_METADATA_BYTES, SLOT_BYTES,
};

/// A row about to be appended: typed cells in virtual-column order and one
/// filter id per slot column (`FilterId::NULL` for an empty slot).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub seq_id: u64,
    pub behavior_id: BehaviorId,
    pub timestamp_ms: i64,
    pub cells: Vec<Option<crate::value::Value>>,
    pub slots: Vec<FilterId>,
}

/// Borrowed view of one encoded row.
#[derive(Debug, Clone, Copy)]
pub struct RowRef<'a> {
    bytes: &'a [u8],
    shard: &'a LogShard,
    ordinal: u32,
}

impl<'a> RowRef<'a> {
    pub fn seq_id(&self) -> u64 {
        u64::from_le_bytes(self.bytes[0..8].try_into().unwrap())
    }

    pub fn behavior_id(&self) -> BehaviorId {
        BehaviorId(u16::from_le_bytes(self.bytes[8..10].try_into().unwrap()))
    }

    pub fn timestamp_ms(&self) -> i64 {
        i64::from_le_bytes(self.bytes[10..18].try_into().unwrap())
    }

    pub fn cell(&self, column: usize) -> &'a [u8] {
        let start = self.shard.cell_offsets[column];
        &self.bytes[start..start + self.shard.widths[column] as usize]
    }

    pub fn cell_count(&self) -> usize {
        self.shard.widths.len()
    }

    pub fn slot(&self, column: usize) -> FilterId {
        let start = self.shard.slot_offset + column * SLOT_BYTES as usize;
        FilterId(u16::from_le_bytes(self.bytes[start..start + 2].try_into().unwrap()))
    }

    pub fn slots(&self) -> impl Iterator<Item = FilterId> + '_ {
        (0..self.shard.slot_count as usize).map(|c| self.slot(c))
    }

    /// Ordinal position within the shard's row region.
    pub fn ordinal(&self) -> u32 {
        self.ordinal
    }

    /// Physical address: byte offset of the row within the shard file.
    pub fn address(&self) -> u64 {
        self.shard.address_of(self.ordinal)
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }
}

/// Dense row store for one attribute-count class.
///
/// Rows are fixed width within a shard, so a row's address is simply its
/// byte offset. Every slot column is indexed, null values included.
#[derive(Debug, Clone, PartialEq)]
pub struct LogShard {
    id: ShardId,
    widths: Vec<u16>,
    slot_count: u16,
    cell_offsets: Vec<usize>,
    slot_offset: usize,
    row_len: usize,
    data: Vec<u8>,
    index: Vec<BTreeMap<u16, Vec<u32>>>,
}

impl LogShard {
    pub fn new(id: ShardId, widths: Vec<u16>, slot_count: u16) -> Result<Self, StoreError> {
        if widths.is_empty() || slot_count == 0 {
            return Err(StoreError::InvalidShape { k: widths.len(), slot_count });
        }
        if widths.len() > MAX_SHARD_COLUMNS || widths.contains(&0) {
            return Err(StoreError::InvalidShape { k: widths.len(), slot_count });
        }
        let mut cell_offsets = Vec::with_capacity(widths.len());
        let mut off = ROW_HEADER_BYTES as usize;
        for &w in &widths {
            cell_offsets.push(off);
            off += w as usize;
        }
        let slot_offset = off;
        let row_len = off + slot_count as usize * SLOT_BYTES as usize;
        Ok(Self {
            id,
            widths,
            slot_count,
            cell_offsets,
            slot_offset,
            row_len,
            data: Vec::new(),
            index: vec![BTreeMap::new(); slot_count as usize],
        })
    }

    pub fn id(&self) -> ShardId {
        self.id
    }

    /// Number of virtual attribute cells per row.
    pub fn k(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[u16] {
        &self.widths
    }

    pub fn slot_count(&self) -> u16 {
        self.slot_count
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.row_len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn address_of(&self, ordinal: u32) -> u64 {
        SHARD_METADATA_BYTES + ordinal as u64 * self.row_len as u64
    }

    fn ordinal_of(&self, address: u64) -> Option<u32> {
        let rel = address.checked_sub(SHARD_METADATA_BYTES)?;
        if rel % self.row_len as u64 != 0 {
            return None;
        }
        let ord = rel / self.row_len as u64;
        (ord < self.len() as u64).then_some(ord as u32)
    }

    pub fn row(&self, ordinal: u32) -> RowRef<'_> {
        let start = ordinal as usize * self.row_len;
        RowRef { bytes: &self.data[start..start + self.row_len], shard: self, ordinal }
    }

    /// Byte ranges of every cell, then every slot, within a row.
    pub fn field_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let cells = self.cell_offsets.iter().zip(&self.widths).map(|(&o, &w)| o..o + w as usize);
        let slots = (0..self.slot_count as usize).map(|c| {
            let o = self.slot_offset + c * SLOT_BYTES as usize;
            o..o + SLOT_BYTES as usize
        });
        cells.chain(slots).collect()
    }

    pub fn row_at(&self, address: u64) -> Option<RowRef<'_>> {
        self.ordinal_of(address).map(|o| self.row(o))
    }

    /// Keeps the rows for which `keep` holds, in order; returns how many
    /// were removed.
    pub fn retain(&mut self, mut keep: impl FnMut(&RowRef<'_>) -> bool) -> usize {
        let flags: Vec<bool> = self.rows().map(|r| keep(&r)).collect();
        let removed = flags.iter().filter(|&&k| !k).count();
        if removed == 0 {
            return 0;
        }
        let mut rebuilt = LogShard::new(self.id, self.widths.clone(), self.slot_count).expect("shape already valid");
        for (o, k) in flags.into_iter().enumerate() {
            if k {
                let bytes = self.row(o as u32).bytes().to_vec();
                rebuilt.append_encoded(&bytes).expect("same row length");
            }
        }
        *self = rebuilt;
        removed
    }

    /// Overwrites row `ordinal` in place with `row`, keeping the index in step.
    pub fn replace_row(&mut self, ordinal: u32, row: &EventRow) -> Result<(), StoreError> {
        let old_slots: Vec<u16> = self.row(ordinal).slots().map(|f| f.0).collect();
        let bytes = self.encode(row)?;
        let start = ordinal as usize * self.row_len;
        self.data[start..start + self.row_len].copy_from_slice(&bytes);
        for (c, old) in old_slots.into_iter().enumerate() {
            let new = row.slots[c].0;
            if new == old {
                continue;
            }
            if let Some(list) = self.index[c].get_mut(&old) {
                list.retain(|&o| o != ordinal);
                if list.is_empty() {
                    self.index[c].remove(&old);
                }
            }
            let list = self.index[c].entry(new).or_default();
            let pos = list.partition_point(|&o| o < ordinal);
            list.insert(pos, ordinal);
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = RowRef<'_>> {
        (0..self.len() as u32).map(move |i| self.row(i))
    }

    /// Encodes `row` and appends it; returns its address.
    pub fn append_row(&mut self, row: &EventRow) -> Result<u64, StoreError> {
        let buf = self.encode(row)?;
        self.append_encoded(&buf)
    }

    /// Encodes `row` in this shard's row format.
    pub fn encode(&self, row: &EventRow) -> Result<Vec<u8>, StoreError> {
        if row.cells.len() != self.k() {
            return Err(StoreError::CellCountMismatch { expected: self.k(), got: row.cells.len() });
        }
        if row.slots.len() != self.slot_count as usize {
            return Err(StoreError::SlotCountMismatch { expected: self.slot_count as usize, got: row.slots.len() });
        }
        let mut buf = vec![0u8; self.row_len];
        buf[0..8].copy_from_slice(&row.seq_id.to_le_bytes());
        buf[8..10].copy_from_slice(&row.behavior_id.0.to_le_bytes());
        buf[10..18].copy_from_slice(&row.timestamp_ms.to_le_bytes());
        for (column, cell) in row.cells.iter().enumerate() {
            let start = self.cell_offsets[column];
            let out = &mut buf[start..start + self.widths[column] as usize];
            encode_cell(cell.as_ref(), out).map_err(|source| StoreError::Cell { column, source })?;
        }
        for (c, slot) in row.slots.iter().enumerate() {
            let start = self.slot_offset + c * 2;
            buf[start..start + 2].copy_from_slice(&slot.0.to_le_bytes());
        }
        Ok(buf)
    }

    /// Appends an already-encoded row (`row_len` bytes).
    pub fn append_encoded(&mut self, bytes: &[u8]) -> Result<u64, StoreError> {
        if bytes.len() != self.row_len {
            return Err(StoreError::RowLength { expected: self.row_len, got: bytes.len() });
        }
        let ordinal = u32::try_from(self.len()).map_err(|_| StoreError::ShardFull)?;
        self.data.extend_from_slice(bytes);
        let row = self.row(ordinal);
        let values: Vec<u16> = row.slots().map(|f| f.0).collect();
        for (c, v) in values.into_iter().enumerate() {
            // Ordinals are appended in increasing order, so lists stay sorted.
            self.index[c].entry(v).or_default().push(ordinal);
        }
        Ok(self.address_of(ordinal))
    }

    /// Rows whose slot `column` holds `value` and whose timestamp lies in
    /// `window`, in seq_id order. Served from the index.
    pub fn scan_by_slot(
        &self,
        column: usize,
        value: FilterId,
        window: Range<i64>,
    ) -> Result<Vec<RowRef<'_>>, StoreError> {
        let postings = self.index.get(column).ok_or(StoreError::UnknownColumn { column, slot_count: self.slot_count })?;
        let mut out: Vec<RowRef<'_>> = postings
            .get(&value.0)
            .map(|ords| ords.iter().map(|&o| self.row(o)).filter(|r| window.contains(&r.timestamp_ms())).collect())
            .unwrap_or_default();
        out.sort_by_key(|r| r.seq_id());
        Ok(out)
    }

    /// Addresses indexed under `value` in `column`, ascending.
    pub fn index_addresses(&self, column: usize, value: FilterId) -> Vec<u64> {
        self.index
            .get(column)
            .and_then(|m| m.get(&value.0))
            .map(|ords| ords.iter().map(|&o| self.address_of(o)).collect())
            .unwrap_or_default()
    }

    /// Distinct values present in a slot column's index.
    pub fn indexed_values(&self, column: usize) -> Vec<FilterId> {
        self.index.get(column).map(|m| m.keys().map(|&v| FilterId(v)).collect()).unwrap_or_default()
    }

    pub fn measure_sizes(&self) -> SizeReport {
        let rows = self.len() as u64;
        let data = self.data.len() as u64;
        let index = rows * self.slot_count as u64 * ADDR_BYTES;
        SizeReport::new(data, index, SHARD_METADATA_BYTES)
    }

    /// Sorts rows by (behavior, seq_id, slots) and rebuilds the index.
    pub fn canonicalize(&mut self) {
        let mut order: Vec<u32> = (0..self.len() as u32).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (self.row(a), self.row(b));
            (ra.behavior_id(), ra.seq_id(), ra.slots().collect::<Vec<_>>()).cmp(&(
                rb.behavior_id(),
                rb.seq_id(),
                rb.slots().collect::<Vec<_>>(),
            ))
        });
        let mut rebuilt = LogShard::new(self.id, self.widths.clone(), self.slot_count).expect("shape already valid");
        rebuilt.data.reserve(self.data.len());
        for o in order {
            let bytes = self.row(o).bytes().to_vec();
            rebuilt.append_encoded(&bytes).expect("same row length");
        }
        *self = rebuilt;
    }

    /// Serializes the shard file: header, row region, index region.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.measure_sizes().total_bytes as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k() as u16).to_le_bytes());
        out.extend_from_slice(&self.slot_count.to_le_bytes());
        out.extend_from_slice(&[0u8; 2]);
        out.extend_from_slice(&self.id.0.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.row_len as u32).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        for w in &self.widths {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.resize(SHARD_METADATA_BYTES as usize, 0);
        out.extend_from_slice(&self.data);
        for column in &self.index {
            for ords in column.values() {
                for &o in ords {
                    out.extend_from_slice(&self.address_of(o).to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses a shard file, checking the index against the rows it covers.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let header_len = SHARD_METADATA_BYTES as usize;
        if bytes.len() < header_len || &bytes[0..4] != MAGIC {
            return Err(StoreError::BadHeader("missing ADLG magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let version = u16_at(4);
        if version != FORMAT_VERSION {
            return Err(StoreError::BadHeader(format!("unsupported version {version}")));
        }
        let k = u16_at(6) as usize;
        let slot_count = u16_at(8);
        let id = ShardId(u32::from_le_bytes(bytes[12..16].try_into().unwrap()));
        let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let row_len = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
        if k > MAX_SHARD_COLUMNS {
            return Err(StoreError::BadHeader(format!("{k} columns exceed the header table")));
        }
        let widths: Vec<u16> = (0..k).map(|i| u16_at(32 + 2 * i)).collect();
        let mut shard = LogShard::new(id, widths, slot_count)?;
        if shard.row_len != row_len {
            return Err(StoreError::BadHeader(format!("row length {row_len} disagrees with widths")));
        }
        let data_len = rows * row_len;
        let index_len = rows * slot_count as usize * ADDR_BYTES as usize;
        if bytes.len() != header_len + data_len + index_len {
            return Err(StoreError::BadHeader(format!(
                "file is {} bytes, header implies {}",
                bytes.len(),
                header_len + data_len + index_len
            )));
        }
        let region = &bytes[header_len..header_len + data_len];
        for chunk in region.chunks_exact(row_len) {
            shard.append_encoded(chunk)?;
        }
        // The index is rebuilt on append; the stored one must agree with it.
        let mut stored = bytes[header_len + data_len..].chunks_exact(8);
        for column in 0..slot_count as usize {
            let mut prev: Option<(u16, u64)> = None;
            for _ in 0..rows {
                let addr = u64::from_le_bytes(stored.next().unwrap().try_into().unwrap());
                let ord = shard.ordinal_of(addr).ok_or(StoreError::CorruptIndex {
                    shard: id,
                    column,
                    detail: format!("address {addr} is not a row offset"),
                })?;
                let value = shard.row(ord).slot(column).0;
                if prev.is_some_and(|p| p >= (value, addr)) {
                    return Err(StoreError::CorruptIndex {
                        shard: id,
                        column,
                        detail: "addresses out of (value, address) order".into(),
                    });
                }
                prev = Some((value, addr));
            }
        }
        Ok(shard)
    }
}
