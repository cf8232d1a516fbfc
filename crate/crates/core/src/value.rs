//! Attribute values and their fixed-width cell encoding.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Declared type of an attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Int64,
    Float64,
    Bool,
    Utf8,
}

impl AttrKind {
    /// Whether `width` is a legal declared width for this kind.
    pub fn accepts_width(self, width: u16) -> bool {
        match self {
            AttrKind::Int64 => (1..=8).contains(&width),
            AttrKind::Float64 => width == 8,
            AttrKind::Bool | AttrKind::Utf8 => width >= 1,
        }
    }

    /// Coerces a parsed value into this kind. JSON integers are accepted for
    /// float attributes; everything else must already match.
    pub fn coerce(self, value: Value) -> Option<Value> {
        match (self, value) {
            (AttrKind::Int64, v @ Value::Int(_)) => Some(v),
            (AttrKind::Float64, v @ Value::Float(_)) => Some(v),
            (AttrKind::Float64, Value::Int(i)) => Some(Value::Float(i as f64)),
            (AttrKind::Bool, v @ Value::Bool(_)) => Some(v),
            (AttrKind::Utf8, v @ Value::Str(_)) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttrKind::Int64 => "int64",
            AttrKind::Float64 => "float64",
            AttrKind::Bool => "bool",
            AttrKind::Utf8 => "utf8",
        };
        f.write_str(s)
    }
}

/// A single attribute value.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn kind(&self) -> AttrKind {
        match self {
            Value::Bool(_) => AttrKind::Bool,
            Value::Int(_) => AttrKind::Int64,
            Value::Float(_) => AttrKind::Float64,
            Value::Str(_) => AttrKind::Utf8,
        }
    }

    /// Bytes this value needs before padding.
    pub fn encoded_len(&self) -> usize {
        match self {
            Value::Bool(_) => 1,
            Value::Int(i) => int_width(*i),
            Value::Float(_) => 8,
            Value::Str(s) => s.len(),
        }
    }

    /// Whether the value fits an attribute declared with `width` bytes.
    pub fn fits(&self, width: u16) -> bool {
        self.encoded_len() <= width as usize
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Minimum two's-complement byte width holding `v`.
fn int_width(v: i64) -> usize {
    for w in 1..8 {
        let bits = 8 * w as u32;
        let lo = -(1i64 << (bits - 1));
        let hi = (1i64 << (bits - 1)) - 1;
        if (lo..=hi).contains(&v) {
            return w;
        }
    }
    8
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CellError {
    #[error("value needs {needed} bytes but the cell is {width} bytes wide")]
    WidthOverflow { width: usize, needed: usize },
    #[error("utf8 values may not contain NUL bytes")]
    EmbeddedNul,
}

/// Writes `value` into `out`, which is exactly one cell wide. `None` writes
/// an all-zero cell.
pub fn encode_cell(value: Option<&Value>, out: &mut [u8]) -> Result<(), CellError> {
    out.fill(0);
    let Some(value) = value else {
        return Ok(());
    };
    let width = out.len();
    let needed = value.encoded_len();
    if needed > width {
        return Err(CellError::WidthOverflow { width, needed });
    }
    match value {
        Value::Bool(b) => out[0] = u8::from(*b),
        Value::Int(i) => {
            // Sign-extended to the full cell so decoding never needs the
            // attribute's declared width.
            let bytes = i.to_le_bytes();
            let fill = if *i < 0 { 0xff } else { 0 };
            for (k, slot) in out.iter_mut().enumerate() {
                *slot = if k < 8 { bytes[k] } else { fill };
            }
        }
        Value::Float(x) => out[..8].copy_from_slice(&x.to_le_bytes()),
        Value::Str(s) => {
            if s.as_bytes().contains(&0) {
                return Err(CellError::EmbeddedNul);
            }
            out[..s.len()].copy_from_slice(s.as_bytes());
        }
    }
    Ok(())
}

/// Inverse of [`encode_cell`] for a non-null cell.
pub fn decode_cell(bytes: &[u8], kind: AttrKind) -> Value {
    match kind {
        AttrKind::Bool => Value::Bool(bytes.first().copied().unwrap_or(0) != 0),
        AttrKind::Int64 => {
            let mut buf = [0u8; 8];
            let n = bytes.len().min(8);
            buf[..n].copy_from_slice(&bytes[..n]);
            if n < 8 && bytes[n - 1] & 0x80 != 0 {
                buf[n..].fill(0xff);
            }
            Value::Int(i64::from_le_bytes(buf))
        }
        AttrKind::Float64 => {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[..8]);
            Value::Float(f64::from_le_bytes(buf))
        }
        AttrKind::Utf8 => {
            let end = bytes.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
            Value::Str(String::from_utf8_lossy(&bytes[..end]).into_owned())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn int_widths() {
        assert_eq!(int_width(0), 1);
        assert_eq!(int_width(127), 1);
        assert_eq!(int_width(128), 2);
        assert_eq!(int_width(-128), 1);
        assert_eq!(int_width(-129), 2);
        assert_eq!(int_width(i64::MAX), 8);
        assert_eq!(int_width(i64::MIN), 8);
    }

    #[test]
    fn utf8_overflow_is_rejected() {
        let mut cell = [0u8; 16];
        let v = Value::Str("x".repeat(20));
        assert_eq!(
            encode_cell(Some(&v), &mut cell),
            Err(CellError::WidthOverflow { width: 16, needed: 20 })
        );
    }

    #[test]
    fn null_is_zeroed() {
        let mut cell = [7u8; 4];
        encode_cell(None, &mut cell).unwrap();
        assert_eq!(cell, [0; 4]);
    }

    #[test]
    fn float_coercion() {
        assert_eq!(AttrKind::Float64.coerce(Value::Int(3)), Some(Value::Float(3.0)));
        assert_eq!(AttrKind::Int64.coerce(Value::Float(3.0)), None);
    }

    fn value_and_kind() -> impl Strategy<Value = (Value, AttrKind)> {
        prop_oneof![
            any::<i64>().prop_map(|i| (Value::Int(i), AttrKind::Int64)),
            any::<bool>().prop_map(|b| (Value::Bool(b), AttrKind::Bool)),
            (-1e12f64..1e12).prop_map(|x| (Value::Float(x), AttrKind::Float64)),
            "[a-z0-9 ]{0,12}".prop_map(|s| (Value::Str(s), AttrKind::Utf8)),
        ]
    }

    proptest! {
        #[test]
        fn cell_round_trip((v, kind) in value_and_kind(), extra in 0usize..6) {
            let width = v.encoded_len().max(1) + extra;
            let mut cell = vec![0u8; width];
            encode_cell(Some(&v), &mut cell).unwrap();
            prop_assert_eq!(decode_cell(&cell, kind), v);
        }
    }
}
