//! Parameter archive: magic, little-endian manifest length, JSON manifest,
//! then every tensor as consecutive little-endian `f32` values.

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ARCHIVE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ICAPARAM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset into the value block, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    /// Free-form metadata, e.g. the model configuration.
    #[serde(default)]
    pub metadata: Option<serde_json::Value>,
    pub tensors: Vec<ArchiveEntry>,
}

pub fn write_archive<T: Scalar>(
    store: &ParamStore<T>,
    metadata: Option<serde_json::Value>,
) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = store
        .iter()
        .map(|p| {
            let e = ArchiveEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset,
            };
            offset += p.value.len();
            e
        })
        .collect();
    let manifest = ArchiveManifest {
        format_version: ARCHIVE_VERSION,
        metadata,
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses an archive into its manifest and tensors (in manifest order).
pub fn read_archive<T: Scalar>(bytes: &[u8]) -> Result<(ArchiveManifest, Vec<Tensor<T>>)> {
    if bytes.len() < 12 {
        return Err(Error::Truncated("archive header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("not a parameter archive".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Truncated("archive manifest".into()))?;
    let manifest: ArchiveManifest = serde_json::from_slice(body)?;
    if manifest.format_version != ARCHIVE_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: ARCHIVE_VERSION,
        });
    }
    let values = &bytes[12 + len..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let raw = values
            .get(4 * e.offset..4 * (e.offset + n))
            .ok_or_else(|| Error::Truncated(format!("tensor {}", e.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.push(Tensor::new(e.shape.clone(), data)?);
    }
    Ok((manifest, tensors))
}

impl<T: Scalar> ParamStore<T> {
    /// Overwrites values from an archive whose names and shapes match this store exactly.
    pub fn load_archive(&mut self, bytes: &[u8]) -> Result<ArchiveManifest> {
        let (manifest, tensors) = read_archive::<T>(bytes)?;
        if manifest.tensors.len() != self.len() {
            return Err(Error::Format(format!(
                "archive has {} tensors, model has {}",
                manifest.tensors.len(),
                self.len()
            )));
        }
        for (entry, tensor) in manifest.tensors.iter().zip(tensors) {
            let p = self
                .by_name_mut(&entry.name)
                .ok_or_else(|| Error::Format(format!("unknown tensor {}", entry.name)))?;
            if p.value.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    entry.name,
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            p.value = tensor;
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor::from_f64(vec![2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap(),
            true,
        )
        .unwrap();
        s.add(
            "a.running_mean",
            Tensor::from_f64(vec![2], &[0.5, 0.0]).unwrap(),
            false,
        )
        .unwrap();
        s
    }

    #[test]
    fn round_trip_preserves_values_and_layout() {
        let s = store();
        let bytes = write_archive(&s, Some(serde_json::json!({"id": "x"}))).unwrap();
        let (m, ts) = read_archive::<f32>(&bytes).unwrap();
        assert_eq!(m.tensors[1].name, "a.running_mean");
        assert!(!m.tensors[1].trainable);
        assert_eq!(ts[0].data(), s.get(s.id("a.weight").unwrap()).value.data());
        let mut t = store();
        t.iter_mut()
            .for_each(|p| p.value.data_mut().iter_mut().for_each(|v| *v = 9.0));
        t.load_archive(&bytes).unwrap();
        assert_eq!(
            write_archive(&t, Some(serde_json::json!({"id": "x"}))).unwrap(),
            bytes
        );
    }

    #[test]
    fn corrupt_archives_are_errors() {
        let bytes = write_archive(&store(), None).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_archive::<f32>(&bad), Err(Error::Format(_))));
        assert!(matches!(
            read_archive::<f32>(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
    }
}
