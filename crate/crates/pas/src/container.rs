//! The `PASC` binary container: magic bytes, a little-endian u32 version,
//! a u32 header length, a UTF-8 JSON header, then raw little-endian f32
//! blobs at the offsets the header's tensor manifest declares.
//!
//! Model checkpoints and persisted adversarial batches are both instances of
//! this container with different header payloads.

use crate::tensor::Tensor;
use crate::{Error, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PASC";
pub const VERSION: u32 = 1;

/// Manifest entry for one tensor blob. `offset` is in bytes, relative to the
/// start of the blob section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

/// An in-memory container: a typed JSON header plus named f32 tensors.
#[derive(Debug, Clone)]
pub struct Container<H> {
    pub header: H,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

/// Headers carry their tensor manifest so offsets round-trip exactly.
pub trait ContainerHeader: Serialize + DeserializeOwned {
    fn manifest(&self) -> &[TensorEntry];
    fn set_manifest(&mut self, manifest: Vec<TensorEntry>);
}

impl<H: ContainerHeader> Container<H> {
    pub fn new(header: H, tensors: Vec<(String, Tensor<f32>)>) -> Self {
        Container { header, tensors }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::invalid(format!("container has no tensor `{name}`")))
    }

    pub fn write_to(&mut self, w: &mut impl Write) -> Result<()> {
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, tensor) in &self.tensors {
            manifest.push(TensorEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                offset,
            });
            offset += (tensor.len() * 4) as u64;
        }
        self.header.set_manifest(manifest);
        let header_json = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Configuration(format!("header serialization failed: {e}")))?;

        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        for (_, tensor) in &self.tensors {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format(bytes.len() as u64, "container truncated before header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12 + header_len;
        if bytes.len() < header_end {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: need {header_len} bytes"),
            ));
        }
        let header: H = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::format(12, format!("bad JSON header: {e}")))?;

        let blob = &bytes[header_end..];
        let mut tensors = Vec::new();
        for entry in header.manifest() {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 4;
            if blob.len() < end {
                return Err(Error::format(
                    (header_end + blob.len()) as u64,
                    format!(
                        "truncated blob for tensor `{}`: need {} bytes at offset {}",
                        entry.name,
                        count * 4,
                        header_end as u64 + entry.offset
                    ),
                ));
            }
            let data: Vec<f32> = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
        }
        Ok(Container { header, tensors })
    }
}
