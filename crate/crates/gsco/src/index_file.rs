//! On-disk retrieval index.
//!
//! Layout: the 8-byte magic `GSCOIDX1`, one line of UTF-8 JSON (entry count,
//! dimension, and per-entry metadata in storage order) ending in `\n`, then
//! `count * dimension` little-endian `f32` values, row-major in the same entry
//! order, and finally the little-endian CRC-32 of every preceding byte. The
//! file carries no timestamps, so identical indexes produce identical files.

use std::fs;
use std::io;
use std::path::Path;

use gsco_core::{EmbeddingVector, Index, IndexEntry};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"GSCOIDX1";

#[derive(Debug, thiserror::Error)]
pub enum IndexFileError {
    #[error("index storage error at {path}: {source}")]
    Storage { path: String, source: io::Error },
    #[error("malformed index file: {0}")]
    Format(String),
}

fn format_err(msg: impl Into<String>) -> IndexFileError {
    IndexFileError::Format(msg.into())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    count: usize,
    dimension: usize,
    entries: Vec<EntryMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryMeta {
    entry_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta_text: Option<String>,
    modality: String,
}

pub fn encode_index(index: &Index) -> Vec<u8> {
    let header = Header {
        count: index.len(),
        dimension: index.dimension(),
        entries: index
            .entries()
            .iter()
            .map(|e| EntryMeta {
                entry_id: e.entry_id.clone(),
                meta_labels: e.meta_labels.clone(),
                meta_text: e.meta_text.clone(),
                modality: e.modality.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + 4 * index.len() * index.dimension());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for e in index.entries() {
        for v in e.vector.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_index(bytes: &[u8]) -> Result<Index, IndexFileError> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| format_err("bad magic"))?;
    if rest.len() < 4 {
        return Err(format_err("file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([trailer[0], trailer[1], trailer[2], trailer[3]]);
    if crc32fast::hash(body) != stored {
        return Err(format_err("checksum mismatch"));
    }
    let rest = &body[MAGIC.len()..];
    let newline = rest.iter().position(|&b| b == b'\n').ok_or_else(|| format_err("header line is not terminated"))?;
    let header: Header =
        serde_json::from_slice(&rest[..newline]).map_err(|e| format_err(format!("bad header: {e}")))?;
    if header.entries.len() != header.count {
        return Err(format_err(format!("header declares {} entries but lists {}", header.count, header.entries.len())));
    }
    let payload = &rest[newline + 1..];
    let expected = header
        .count
        .checked_mul(header.dimension)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err("count * dimension overflows"))?;
    if payload.len() != expected {
        return Err(format_err(format!(
            "payload is {} bytes, expected {} for {} x {} floats",
            payload.len(),
            expected,
            header.count,
            header.dimension
        )));
    }
    let row_bytes = 4 * header.dimension;
    let entries = header
        .entries
        .into_iter()
        .enumerate()
        .map(|(i, meta)| {
            let row = &payload[i * row_bytes..(i + 1) * row_bytes];
            let values = row.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            IndexEntry {
                entry_id: meta.entry_id,
                vector: EmbeddingVector::new(values),
                meta_labels: meta.meta_labels,
                meta_text: meta.meta_text,
                modality: meta.modality,
            }
        })
        .collect();
    Index::build(entries, header.dimension).map_err(|e| format_err(format!("invalid entries: {e}")))
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<(), IndexFileError> {
    let path = path.as_ref();
    fs::write(path, encode_index(index)).map_err(|source| IndexFileError::Storage { path: path.display().to_string(), source })
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index, IndexFileError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IndexFileError::Storage { path: path.display().to_string(), source })?;
    decode_index(&bytes)
}
