//! Binary container shared by parameter checkpoints and dataset files:
//!
//! ```text
//! magic "AWBLOB01" | u64 LE header length | JSON header | column data (LE)
//! ```
//!
//! The header names every column with its dtype and length, so truncated or
//! padded files are rejected before anything is constructed.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AWBLOB01";

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::F64(v) => v.len(),
            Column::I64(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            Column::F64(_) => "f64",
            Column::I64(_) => "i64",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ColumnHeader {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    kind: String,
    columns: Vec<ColumnHeader>,
    meta: M,
}

pub fn encode<M: Serialize>(kind: &str, meta: &M, columns: &[(&str, Column)]) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_string(),
        columns: columns
            .iter()
            .map(|(name, c)| ColumnHeader {
                name: name.to_string(),
                dtype: c.dtype().to_string(),
                len: c.len(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let body: usize = columns.iter().map(|(_, c)| c.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, c) in columns {
        match c {
            Column::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Column::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

/// Decoded container: metadata plus named columns in file order.
pub struct Decoded<M> {
    pub meta: M,
    pub columns: Vec<(String, Column)>,
}

impl<M> Decoded<M> {
    pub fn take_f64(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.take(name)? {
            Column::F64(v) => Ok(v),
            Column::I64(_) => Err(Error::Checkpoint(format!("column `{name}` is not f64"))),
        }
    }

    pub fn take_i64(&mut self, name: &str) -> Result<Vec<i64>> {
        match self.take(name)? {
            Column::I64(v) => Ok(v),
            Column::F64(_) => Err(Error::Checkpoint(format!("column `{name}` is not i64"))),
        }
    }

    fn take(&mut self, name: &str) -> Result<Column> {
        let pos = self
            .columns
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing column `{name}`")))?;
        Ok(self.columns.remove(pos).1)
    }
}

pub fn decode<M: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<Decoded<M>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic or truncated header".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("header length exceeds file size".into()))?;
    let header: Header<M> = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a `{kind}` file, found `{}`",
            header.kind
        )));
    }
    let expected: usize = header.columns.iter().map(|c| c.len * 8).sum();
    let body = &bytes[body_start..];
    if body.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header declares {expected}",
            body.len()
        )));
    }
    let mut columns = Vec::with_capacity(header.columns.len());
    let mut pos = 0;
    for c in header.columns {
        let raw = &body[pos..pos + c.len * 8];
        pos += c.len * 8;
        let words = raw.chunks_exact(8).map(|w| w.try_into().unwrap());
        let col = match c.dtype.as_str() {
            "f64" => Column::F64(words.map(f64::from_le_bytes).collect()),
            "i64" => Column::I64(words.map(i64::from_le_bytes).collect()),
            other => return Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
        };
        columns.push((c.name, col));
    }
    Ok(Decoded {
        meta: header.meta,
        columns,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
