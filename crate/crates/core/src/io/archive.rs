//! Self-describing binary model archive.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "DLDSMODL"
//! version    u32
//! variant    u8       0 discrete, 1 discrete_identity, 2 continuous
//! matrices   u32 count, then per matrix: u32 rows, u32 cols, rows·cols f64 (column-major)
//! config     u32 length, UTF-8 TOML
//! epochs     u64
//! error      f64      final training error
//! checksum   8 bytes  first 8 bytes of SHA-256 over everything above
//! ```
//!
//! Discrete archives store the loading matrix first, then the dictionary.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::continuous::ContinuousModel;
use crate::discrete::DiscreteModel;
use crate::error::{Error, Result};
use crate::io::config::ModelVariant;
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"DLDSMODL";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum ArchivedModel {
    Discrete(DiscreteModel),
    Continuous(ContinuousModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub variant: ModelVariant,
    pub model: ArchivedModel,
    /// Snapshot of the experiment configuration that produced the model.
    pub config: String,
    pub epochs: u64,
    pub final_error: f64,
}

impl ModelArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(match self.variant {
            ModelVariant::Discrete => 0,
            ModelVariant::DiscreteIdentity => 1,
            ModelVariant::Continuous => 2,
        });
        let matrices: Vec<&Matrix> = match &self.model {
            ArchivedModel::Discrete(m) => std::iter::once(m.loading()).chain(m.dictionary()).collect(),
            ArchivedModel::Continuous(m) => m.generators().iter().collect(),
        };
        out.extend_from_slice(&(matrices.len() as u32).to_le_bytes());
        for m in matrices {
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.epochs.to_le_bytes());
        out.extend_from_slice(&self.final_error.to_le_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest[..CHECKSUM_LEN]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("missing archive magic header".into()));
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
            return Err(Error::Integrity("archive is truncated".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body)[..CHECKSUM_LEN] != *checksum {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted archive)".into()));
        }
        r.bytes = body;
        let variant = match r.u8()? {
            0 => ModelVariant::Discrete,
            1 => ModelVariant::DiscreteIdentity,
            2 => ModelVariant::Continuous,
            v => return Err(Error::Integrity(format!("unknown model variant tag {v}"))),
        };
        let count = r.u32()? as usize;
        let mut matrices = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Integrity("matrix size overflows".into()))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Integrity("matrix size overflows".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
            matrices.push(Matrix::from_iterator(rows, cols, values));
        }
        let config_len = r.u32()? as usize;
        let config = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| Error::Integrity("config snapshot is not UTF-8".into()))?;
        let epochs = r.u64()?;
        let final_error = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after archive body".into()));
        }
        let model = match variant {
            ModelVariant::Continuous => ArchivedModel::Continuous(ContinuousModel::new(matrices)?),
            _ => {
                let mut it = matrices.into_iter();
                let loading = it
                    .next()
                    .ok_or_else(|| Error::Integrity("discrete archive without a loading matrix".into()))?;
                ArchivedModel::Discrete(DiscreteModel::new(loading, it.collect())?)
            }
        };
        Ok(Self {
            variant,
            model,
            config,
            epochs,
            final_error,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity("archive is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_model(archive: &ModelArchive, path: &Path) -> Result<()> {
    std::fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArchive> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArchive::from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
}
