//! Dataset file: magic, little-endian `u32` header length, JSON header, the
//! records, then the SHA-256 of everything before it.
//!
//! Each record is a `u16` subject-id length and UTF-8 bytes, a `u32`
//! component id, a `u8` label, then the spatial map, timecourse and power
//! spectrum as little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::{ComponentRecord, Label};
use super::synth::SynthConfig;
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ICADATA\0";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub grid: [usize; 3],
    pub timecourse_len: usize,
    pub n_records: usize,
    /// Generator settings, when the dataset is synthetic.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<ComponentRecord>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Dataset {
    /// Checks every record against the grid and timecourse length.
    pub fn new(
        grid: [usize; 3],
        timecourse_len: usize,
        records: Vec<ComponentRecord>,
        synth: Option<SynthConfig>,
    ) -> Result<Self> {
        let voxels: usize = grid.iter().product();
        for r in &records {
            if r.spatial_map.len() != voxels
                || r.timecourse.len() != timecourse_len
                || r.power_spectrum.len() != timecourse_len / 2
            {
                return Err(Error::Format(format!(
                    "record {}/{} does not match grid {grid:?} and length {timecourse_len}",
                    r.subject_id, r.component_id
                )));
            }
            if r.subject_id.len() > u16::MAX as usize {
                return Err(Error::Format("subject id too long".into()));
            }
        }
        Ok(Self {
            header: DatasetHeader {
                format_version: DATASET_VERSION,
                grid,
                timecourse_len,
                n_records: records.len(),
                synth,
            },
            records,
        })
    }

    pub fn generate(config: &SynthConfig) -> Result<Self> {
        let records = super::synth::generate_synthetic(config)?;
        Dataset::new(
            config.grid,
            config.timecourse_len,
            records,
            Some(config.clone()),
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)?;
        let per_record = 4
            * (self.header.grid.iter().product::<usize>() + self.header.timecourse_len * 3 / 2)
            + 16;
        let mut out =
            Vec::with_capacity(12 + json.len() + self.records.len() * per_record + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for r in &self.records {
            out.extend_from_slice(&(r.subject_id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.subject_id.as_bytes());
            out.extend_from_slice(&r.component_id.to_le_bytes());
            out.push(r.label.as_u8());
            for v in r
                .spatial_map
                .iter()
                .chain(&r.timecourse)
                .chain(&r.power_spectrum)
            {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Hex SHA-256 of the encoded dataset; equal datasets hash equally.
    pub fn hash(&self) -> Result<String> {
        let bytes = self.encode()?;
        Ok(hex(&bytes[bytes.len() - DIGEST_LEN..]))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let len = cur.u32("header length")? as usize;
        let header: DatasetHeader = serde_json::from_slice(cur.take(len, "header")?)
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        if header.format_version != DATASET_VERSION {
            return Err(Error::Version {
                found: header.format_version,
                expected: DATASET_VERSION,
            });
        }
        let voxels: usize = header.grid.iter().product();
        let t = header.timecourse_len;
        let mut records = Vec::with_capacity(header.n_records.min(bytes.len() / 16 + 1));
        for _ in 0..header.n_records {
            let id_len = cur.u16("subject id length")? as usize;
            let subject_id = String::from_utf8(cur.take(id_len, "subject id")?.to_vec())
                .map_err(|_| Error::Format("subject id is not UTF-8".into()))?;
            let component_id = cur.u32("component id")?;
            let label = Label::from_u8(cur.take(1, "label")?[0])
                .map_err(|_| Error::Format("label byte outside {0, 1}".into()))?;
            records.push(ComponentRecord {
                subject_id,
                component_id,
                label,
                spatial_map: cur.f32s(voxels, "spatial map")?,
                timecourse: cur.f32s(t, "timecourse")?,
                power_spectrum: cur.f32s(t / 2, "power spectrum")?,
            });
        }
        let body_end = cur.pos;
        let stored = cur.take(DIGEST_LEN, "checksum")?;
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        let computed = Sha256::digest(&bytes[..body_end]);
        if stored != computed.as_slice() {
            return Err(Error::Checksum {
                stored: hex(stored),
                computed: hex(&computed),
            });
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)
            .map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::decode(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("file ends inside the {what}"))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
