//! Intermediate tables produced by running a processor over every chunk.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::chunking::ChunkSpec;
use crate::query::{ColumnDef, DataType, Literal};
use crate::trace::Policy;

/// Column added to every intermediate table: epoch seconds of the chunk start.
pub const CHUNK_COLUMN: &str = "chunk";
/// Column added to every intermediate table: region index (0 without regions).
pub const REGION_COLUMN: &str = "region";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Str(String),
    Null,
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn truthy(&self) -> bool {
        matches!(self, Value::Num(v) if *v != 0.0)
    }

    pub fn matches(&self, lit: &Literal) -> bool {
        match (self, lit) {
            (Value::Num(a), Literal::Num(b)) => a == b,
            (Value::Str(a), Literal::Str(b)) => a == b,
            _ => false,
        }
    }

    /// Total order used for grouping keys: nulls, then numbers, then strings.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Less,
            (_, Value::Null) => Ordering::Greater,
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Num(_), Value::Str(_)) => Ordering::Less,
            (Value::Str(_), Value::Num(_)) => Ordering::Greater,
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
        }
    }
}

impl From<&Literal> for Value {
    fn from(l: &Literal) -> Self {
        match l {
            Literal::Num(v) => Value::Num(*v),
            Literal::Str(s) => Value::Str(s.clone()),
        }
    }
}

impl core::fmt::Display for Value {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
            Value::Null => f.write_str("NULL"),
        }
    }
}

/// Everything about a table that is known before any processor runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TableMeta {
    pub name: String,
    pub camera_id: String,
    pub schema: Vec<ColumnDef>,
    pub max_rows: u64,
    pub chunk: ChunkSpec,
    pub start_time: i64,
    /// First frame of the split window.
    pub first_frame: u64,
    pub n_chunks: u64,
    pub n_regions: u32,
    /// Policy after any mask adjustment.
    pub policy: Policy,
}

impl TableMeta {
    /// Epoch seconds of the first frame of chunk `k`.
    pub fn chunk_time(&self, k: u64) -> f64 {
        self.start_time as f64 + (self.first_frame + k * self.chunk.pitch_frames) as f64 / f64::from(self.chunk.fps)
    }

    /// Schema columns followed by `chunk` and `region`.
    pub fn column_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.schema.iter().map(|c| c.name.clone()).collect();
        out.push(CHUNK_COLUMN.to_string());
        out.push(REGION_COLUMN.to_string());
        out
    }

    pub fn default_row(&self) -> Vec<Value> {
        self.schema.iter().map(|c| Value::from(&c.default)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub chunk_index: u64,
    pub region: u32,
    /// One value per schema column.
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateTable {
    pub meta: TableMeta,
    pub rows: Vec<TableRow>,
}

/// How a processor run on one chunk ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    TimedOut,
    Crashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutput {
    pub chunk_index: u64,
    pub region: u32,
    pub status: RunStatus,
    /// Stdout lines in emission order.
    pub lines: Vec<String>,
}

/// Parses one tab-separated output line against the schema. Missing or
/// malformed fields take the column default and extra fields are ignored,
/// so a row is always produced.
pub fn coerce_row(line: &str, schema: &[ColumnDef]) -> Vec<Value> {
    let mut fields = line.split('\t');
    schema
        .iter()
        .map(|col| {
            let field = fields.next();
            match (col.dtype, field) {
                (DataType::String, Some(s)) => Value::Str(s.to_string()),
                (DataType::Number, Some(s)) => match s.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => Value::Num(v),
                    _ => Value::from(&col.default),
                },
                (_, None) => Value::from(&col.default),
            }
        })
        .collect()
}

/// Builds the table from per-chunk outputs in any order. Rows are ordered by
/// `(chunk_index, region)` then emission order; each chunk contributes at
/// most `max_rows` rows, and a run that timed out or crashed contributes
/// exactly one default row regardless of what it printed.
pub fn assemble(meta: TableMeta, mut outputs: Vec<ChunkOutput>) -> IntermediateTable {
    outputs.sort_by_key(|o| (o.chunk_index, o.region));
    let cap = usize::try_from(meta.max_rows).unwrap_or(usize::MAX);
    let mut rows = Vec::new();
    for out in outputs {
        match out.status {
            RunStatus::Completed => {
                for line in out.lines.iter().take(cap) {
                    rows.push(TableRow {
                        chunk_index: out.chunk_index,
                        region: out.region,
                        values: coerce_row(line, &meta.schema),
                    });
                }
            }
            RunStatus::TimedOut | RunStatus::Crashed => {
                if cap > 0 {
                    rows.push(TableRow {
                        chunk_index: out.chunk_index,
                        region: out.region,
                        values: meta.default_row(),
                    });
                }
            }
        }
    }
    IntermediateTable { meta, rows }
}
