//! CSV and line-delimited JSON exports.

use std::io::Write;

use serde::Serialize;

use super::MetricsError;

/// One CSV row per record, header from the field names.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| MetricsError::Export(e.to_string()))?;
    }
    out.flush().map_err(|e| MetricsError::Export(e.to_string()))
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> Result<(), MetricsError> {
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| MetricsError::Export(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| MetricsError::Export(e.to_string()))?;
    }
    Ok(())
}
