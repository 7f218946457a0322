//! Versioned binary container for checkpoints and exported artifacts.
//!
//! Layout: a fixed magic and format version, one JSON header describing
//! the payload (kind, step, config snapshot with its SHA-256, free-form
//! metadata, and a section table), then tightly packed little-endian
//! section data. Sections are named arrays of `f64` (parameters,
//! optimizer moments) or `f32` (embeddings). Writing is deterministic:
//! the same container saves to identical bytes, so artifact diffing and
//! rerun comparisons work at the file level.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

/// File magic, first four bytes of every container.
pub const MAGIC: [u8; 4] = *b"TCCK";
/// Current format version.
pub const VERSION: u32 = 1;

// ── Header ──────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionDtype {
    F64,
    F32,
}

impl SectionDtype {
    fn width(&self) -> usize {
        match self {
            SectionDtype::F64 => 8,
            SectionDtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionDesc {
    name: String,
    dtype: SectionDtype,
    /// Offset from the start of the data region. [bytes]
    offset: u64,
    /// Element count, not bytes.
    count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    step: u64,
    config: serde_json::Value,
    config_sha256: String,
    meta: serde_json::Value,
    sections: Vec<SectionDesc>,
}

// ── Container ───────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub enum SectionData {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl SectionData {
    fn dtype(&self) -> SectionDtype {
        match self {
            SectionData::F64(_) => SectionDtype::F64,
            SectionData::F32(_) => SectionDtype::F32,
        }
    }

    fn count(&self) -> usize {
        match self {
            SectionData::F64(v) => v.len(),
            SectionData::F32(v) => v.len(),
        }
    }
}

/// SHA-256 of a config's canonical JSON. `serde_json` maps are sorted,
/// so the same config value always hashes identically.
pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("JSON value always serializes");
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// In-memory container. Build with [`Container::new`] and the push
/// methods, or read one back with [`Container::load`].
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub step: u64,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    sections: Vec<(String, SectionData)>,
}

impl Container {
    pub fn new(kind: &str, config: serde_json::Value, step: u64) -> Self {
        Self {
            kind: kind.to_string(),
            step,
            config,
            meta: serde_json::Value::Null,
            sections: Vec::new(),
        }
    }

    pub fn config_sha256(&self) -> String {
        config_hash(&self.config)
    }

    fn push(&mut self, name: &str, data: SectionData) -> Result<()> {
        if name.is_empty() {
            return Err(Error::Invalid("container: empty section name".into()));
        }
        if self.sections.iter().any(|(n, _)| n == name) {
            return Err(Error::Invalid(format!("container: duplicate section {name}")));
        }
        self.sections.push((name.to_string(), data));
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        self.push(name, SectionData::F64(data))
    }

    pub fn push_f32(&mut self, name: &str, data: Vec<f32>) -> Result<()> {
        self.push(name, SectionData::F32(data))
    }

    pub fn section_names(&self) -> Vec<&str> {
        self.sections.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn get(&self, name: &str) -> Result<&SectionData> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::Invalid(format!("container: no section {name}")))
    }

    pub fn get_f64(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            SectionData::F64(v) => Ok(v),
            SectionData::F32(_) => {
                Err(Error::Invalid(format!("container: section {name} is f32, wanted f64")))
            }
        }
    }

    pub fn get_f32(&self, name: &str) -> Result<&[f32]> {
        match self.get(name)? {
            SectionData::F32(v) => Ok(v),
            SectionData::F64(_) => {
                Err(Error::Invalid(format!("container: section {name} is f64, wanted f32")))
            }
        }
    }

    /// Serialize to bytes: magic, version, header length, header JSON,
    /// then every section tightly packed in push order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut descs = Vec::with_capacity(self.sections.len());
        let mut offset = 0u64;
        for (name, data) in &self.sections {
            let bytes = (data.count() * data.dtype().width()) as u64;
            descs.push(SectionDesc {
                name: name.clone(),
                dtype: data.dtype(),
                offset,
                count: data.count() as u64,
            });
            offset += bytes;
        }
        let header = Header {
            kind: self.kind.clone(),
            step: self.step,
            config: self.config.clone(),
            config_sha256: self.config_sha256(),
            meta: self.meta.clone(),
            sections: descs,
        };
        let header_json = serde_json::to_vec(&header).expect("header always serializes");

        let mut out =
            Vec::with_capacity(16 + header_json.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, data) in &self.sections {
            match data {
                SectionData::F64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                SectionData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let fail = |msg: String| Error::Invalid(format!("{origin}: {msg}"));
        if bytes.len() < 16 {
            return Err(fail(format!("truncated container ({} bytes)", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(fail(format!(
                "bad magic {:02x?}, expected {:02x?}",
                &bytes[..4],
                MAGIC
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fail(format!("unsupported container version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail("header overruns file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| fail(format!("header JSON: {e}")))?;
        let want_hash = config_hash(&header.config);
        if header.config_sha256 != want_hash {
            return Err(fail(format!(
                "config hash mismatch: header says {}, content hashes to {want_hash}",
                header.config_sha256
            )));
        }

        let data = &bytes[data_start..];
        let mut sections = Vec::with_capacity(header.sections.len());
        for desc in &header.sections {
            if sections.iter().any(|(n, _): &(String, SectionData)| *n == desc.name) {
                return Err(fail(format!("duplicate section {}", desc.name)));
            }
            let width = desc.dtype.width();
            let start = desc.offset as usize;
            let end = start
                .checked_add(desc.count as usize * width)
                .filter(|&e| e <= data.len())
                .ok_or_else(|| fail(format!("section {} overruns file", desc.name)))?;
            let raw = &data[start..end];
            let parsed = match desc.dtype {
                SectionDtype::F64 => SectionData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                SectionDtype::F32 => SectionData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
            };
            sections.push((desc.name.clone(), parsed));
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            config: header.config,
            meta: header.meta,
            sections,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
