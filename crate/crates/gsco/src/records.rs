//! RunRecord JSONL files: one diagnosis per (sample, mode).

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use gsco_core::pipeline::Mode;
use gsco_core::Diagnosis;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub mode: Mode,
    pub diagnosis: Diagnosis,
    /// Wall-clock time for the sample. Only present when timing was requested,
    /// since it makes otherwise identical runs differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("cannot access records file {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("records line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn write_records(records: &[RunRecord], mut out: impl Write) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_records(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), RecordsError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_records(records, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|source| RecordsError::Io { path: path.display().to_string(), source })
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<RunRecord>, RecordsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| RecordsError::Parse { line: line_no, message: e.to_string() })?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&text).map_err(|e| RecordsError::Parse { line: line_no, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, RecordsError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| RecordsError::Io { path: path.display().to_string(), source })?;
    read_records(BufReader::new(file))
}
