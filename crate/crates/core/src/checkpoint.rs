//! Checkpoint container.
//!
//! Layout on disk:
//!
//! ```text
//! u64 little-endian  header length in bytes
//! JSON header        {"format_version", "entries": [{"name", "dtype": "f32", "shape", "byte_offset"}], "metadata"}
//! payload            concatenated little-endian f32 arrays, in entry order
//! ```
//!
//! `byte_offset` is relative to the start of the payload. Files are written to
//! a temporary sibling and renamed into place.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{DnfError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    entries: Vec<EntryHeader>,
    metadata: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: Value,
    entries: Vec<Entry>,
}

impl Default for Container {
    fn default() -> Self {
        Self::new()
    }
}

impl Container {
    pub fn new() -> Self {
        Self { metadata: Value::Object(Default::default()), entries: Vec::new() }
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        let v = serde_json::to_value(value)?;
        match &mut self.metadata {
            Value::Object(map) => {
                map.insert(key.to_string(), v);
                Ok(())
            }
            _ => Err(DnfError::Format("metadata is not a JSON object".into())),
        }
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| DnfError::Format(format!("metadata key `{key}` missing")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DnfError::shape(format!(
                "entry `{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(DnfError::Format(format!("duplicate entry `{name}`")));
        }
        self.entries.push(Entry { name, shape, data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Result<()> {
        self.push(name, shape, data.iter().map(|&x| x as f32).collect())
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| DnfError::Format(format!("entry `{name}` missing")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    /// Entry values widened to f64, checking the expected shape.
    pub fn get_f64(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let e = self.get(name)?;
        if e.shape != shape {
            return Err(DnfError::shape(format!(
                "entry `{name}` has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        Ok(e.data.iter().map(|&x| x as f64).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let h = EntryHeader {
                    name: e.name.clone(),
                    dtype: "f32".into(),
                    shape: e.shape.clone(),
                    byte_offset: offset,
                };
                offset += 4 * e.data.len() as u64;
                h
            })
            .collect();
        let header = Header { format_version: FORMAT_VERSION, entries, metadata: self.metadata.clone() };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.entries {
            for x in &e.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(DnfError::Format("file shorter than the length prefix".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| DnfError::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format_version != FORMAT_VERSION {
            return Err(DnfError::Format(format!("unsupported format version {}", header.format_version)));
        }
        let payload = &bytes[8 + hlen..];
        let mut expected_offset = 0u64;
        let mut names = HashSet::new();
        let mut entries = Vec::with_capacity(header.entries.len());
        for h in header.entries {
            if h.dtype != "f32" {
                return Err(DnfError::Format(format!("entry `{}` has dtype {}", h.name, h.dtype)));
            }
            if h.byte_offset != expected_offset {
                return Err(DnfError::Format(format!(
                    "entry `{}` at offset {} but {} expected",
                    h.name, h.byte_offset, expected_offset
                )));
            }
            if !names.insert(h.name.clone()) {
                return Err(DnfError::Format(format!("duplicate entry `{}`", h.name)));
            }
            let count: usize = h.shape.iter().product();
            let start = h.byte_offset as usize;
            let raw = payload
                .get(start..start + 4 * count)
                .ok_or_else(|| DnfError::Format(format!("payload truncated in `{}`", h.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected_offset += 4 * count as u64;
            entries.push(Entry { name: h.name, shape: h.shape, data });
        }
        if payload.len() as u64 != expected_offset {
            return Err(DnfError::Format(format!(
                "payload has {} bytes, entries describe {}",
                payload.len(),
                expected_offset
            )));
        }
        Ok(Self { metadata: header.metadata, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DnfError::MissingFiles(vec![path.to_path_buf()]));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| DnfError::invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
