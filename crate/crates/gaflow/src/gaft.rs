//! GAFT v1 tensor archives.
//!
//! Layout: the 8-byte magic `GAFT1\0\0\0`, a little-endian `u32` manifest
//! length `M`, `M` bytes of UTF-8 JSON manifest, then the payload. The
//! manifest is `{"metadata":{..},"tensors":[{"name","shape","offset","len"}]}`
//! where `offset` and `len` count bytes from the start of the payload. Each
//! tensor is stored as little-endian `f32`. The writer packs tensors back to
//! back in insertion order; the reader accepts any ascending, aligned,
//! non-overlapping layout but rejects bytes past the last tensor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use gaflow_core::DenseTensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MAGIC: [u8; 8] = *b"GAFT1\0\0\0";
/// Bytes before the manifest: magic plus its length prefix.
pub const HEADER_LEN: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum GaftError {
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("header truncated at offset {offset}")]
    HeaderTruncated { offset: usize },
    #[error("manifest truncated: declares {declared} bytes at offset {HEADER_LEN}, file holds {available}")]
    ManifestTruncated { declared: usize, available: usize },
    #[error("invalid manifest at offset {HEADER_LEN}: {0}")]
    Manifest(String),
    #[error("payload truncated: tensor {tensor} ends at file offset {end}, file holds {available} bytes")]
    PayloadTruncated {
        tensor: String,
        end: usize,
        available: usize,
    },
    #[error("bad layout at file offset {offset}: {msg}")]
    Layout { offset: usize, msg: String },
    #[error("{0}")]
    Tensor(#[from] gaflow_core::Error),
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("archive too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = GaftError> = std::result::Result<T, E>;

/// Named tensors in insertion order plus free-form metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<DenseTensor>,
    pub metadata: BTreeMap<String, Value>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `tensor` under its own name, refusing a name already present.
    pub fn insert(&mut self, tensor: DenseTensor) -> Result<()> {
        if self.get(tensor.name()).is_some() {
            return Err(GaftError::DuplicateName(tensor.name().to_owned()));
        }
        self.entries.push(tensor);
        Ok(())
    }

    pub fn with(mut self, tensor: DenseTensor) -> Result<Self> {
        self.insert(tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.iter().find(|t| t.name() == name)
    }

    pub fn entries(&self) -> &[DenseTensor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata_str(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).and_then(Value::as_str)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    metadata: BTreeMap<String, Value>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Serializes `archive` into a byte vector.
pub fn to_bytes(archive: &TensorArchive) -> Result<Vec<u8>> {
    let mut offset = 0usize;
    let mut tensors = Vec::with_capacity(archive.entries.len());
    for t in &archive.entries {
        if let Some(index) = t.data().iter().position(|v| !v.is_finite()) {
            return Err(gaflow_core::Error::NonFinite {
                tensor: t.name().to_owned(),
                index,
            }
            .into());
        }
        let len = t.len() * 4;
        tensors.push(ManifestEntry {
            name: t.name().to_owned(),
            shape: t.shape().to_vec(),
            offset,
            len,
        });
        offset += len;
    }
    let manifest = serde_json::to_vec(&Manifest {
        metadata: archive.metadata.clone(),
        tensors,
    })
    .map_err(|e| GaftError::Manifest(e.to_string()))?;
    let manifest_len = u32::try_from(manifest.len())
        .map_err(|_| GaftError::TooLarge(format!("manifest of {} bytes", manifest.len())))?;

    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in &archive.entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `archive` to `sink` and returns the number of bytes written.
pub fn write_archive(archive: &TensorArchive, mut sink: impl Write) -> Result<u64> {
    let bytes = to_bytes(archive)?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len() as u64)
}

/// Parses a complete archive held in memory.
pub fn from_bytes(bytes: &[u8]) -> Result<TensorArchive> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            GaftError::HeaderTruncated { offset: bytes.len() }
        } else {
            GaftError::BadMagic
        });
    }
    if bytes[..8] != MAGIC {
        return Err(GaftError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(GaftError::HeaderTruncated { offset: bytes.len() });
    }
    let declared = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = HEADER_LEN
        .checked_add(declared)
        .filter(|&end| end <= bytes.len())
        .ok_or(GaftError::ManifestTruncated {
            declared,
            available: bytes.len() - HEADER_LEN,
        })?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
        .map_err(|e| GaftError::Manifest(e.to_string()))?;
    let payload = &bytes[payload_start..];

    let mut archive = TensorArchive {
        entries: Vec::with_capacity(manifest.tensors.len()),
        metadata: manifest.metadata,
    };
    let mut cursor = 0usize;
    for entry in manifest.tensors {
        let at = payload_start.saturating_add(entry.offset);
        if entry.offset % 4 != 0 {
            return Err(GaftError::Layout {
                offset: at,
                msg: format!("tensor {} is not 4-byte aligned", entry.name),
            });
        }
        if entry.offset < cursor {
            return Err(GaftError::Layout {
                offset: at,
                msg: format!("tensor {} overlaps or precedes the previous tensor", entry.name),
            });
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| GaftError::Layout {
                offset: at,
                msg: format!("tensor {} has an overflowing shape {:?}", entry.name, entry.shape),
            })?;
        if count != entry.len {
            return Err(GaftError::Layout {
                offset: at,
                msg: format!(
                    "tensor {} has shape {:?} ({count} bytes) but len {}",
                    entry.name, entry.shape, entry.len
                ),
            });
        }
        let end = entry.offset.saturating_add(entry.len);
        if end > payload.len() {
            return Err(GaftError::PayloadTruncated {
                tensor: entry.name,
                end: payload_start.saturating_add(end),
                available: bytes.len(),
            });
        }
        let data = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        archive.insert(DenseTensor::new(entry.name, entry.shape, data)?)?;
        cursor = end;
    }
    if cursor != payload.len() {
        return Err(GaftError::Layout {
            offset: payload_start + cursor,
            msg: format!("{} trailing bytes after the last tensor", payload.len() - cursor),
        });
    }
    Ok(archive)
}

/// Reads a complete archive from `source`.
pub fn read_archive(mut source: impl Read) -> Result<TensorArchive> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn read_file(path: &Path) -> Result<TensorArchive> {
    read_archive(BufReader::new(File::open(path)?))
}

pub fn write_file(archive: &TensorArchive, path: &Path) -> Result<u64> {
    write_archive(archive, BufWriter::new(File::create(path)?))
}
