//! JSON-lines persistence for layouts and other line-per-item files.
//!
//! The layout record format is one JSON object per line carrying the dialect
//! tag, condition, canvas, and elements array, plus an optional stable `id`
//! used to key embedding caches and prediction traces.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Layout;

/// A stored layout plus its optional record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(flatten)]
    pub layout: Layout,
}

impl LayoutRecord {
    pub fn new(id: impl Into<String>, layout: Layout) -> Self {
        LayoutRecord { id: Some(id.into()), layout }
    }

    pub fn anonymous(layout: Layout) -> Self {
        LayoutRecord { id: None, layout }
    }
}

// ── Generic JSONL ─────────────────────────────────────────────────────

/// Read every line of a JSON-lines file into `T`. Blank lines are skipped;
/// a malformed line fails with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl_from(BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_jsonl_from<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        items.push(item);
    }
    Ok(items)
}

/// Write items as one JSON object per line. Output is deterministic for a
/// given input sequence.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_jsonl_to(&mut writer, items)?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl_to<T: Serialize>(writer: &mut impl Write, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item)?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|e| Error::data(format!("write failed: {e}")))?;
    }
    Ok(())
}

// ── Layout records ────────────────────────────────────────────────────

/// Load layout records and validate each layout's cross-field invariants.
pub fn read_layout_records(path: &Path) -> Result<Vec<LayoutRecord>> {
    let records: Vec<LayoutRecord> = read_jsonl(path)?;
    for (i, rec) in records.iter().enumerate() {
        rec.layout.validate().map_err(|e| {
            Error::data(format!("{}: record {}: {e}", path.display(), i + 1))
        })?;
    }
    Ok(records)
}

pub fn write_layout_records(path: &Path, records: &[LayoutRecord]) -> Result<()> {
    write_jsonl(path, records)
}
