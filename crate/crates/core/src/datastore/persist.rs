//! Binary datastore files.
//!
//! ```text
//! header  "OBKD" | version u16 | dim u32 | count u64
//! labels  n u32 | n × (len u32, utf-8 bytes) | na i32 (-1 = unset)
//! body    count × (id u64 | label u32 | dim × f32)
//! ```
//!
//! All integers and floats are little-endian. Only live entries are written,
//! in insertion order, so saving the same logical store twice is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Datastore;
use crate::error::{Error, Result};
use crate::types::{Embedding, EntryId, LabelId, LabelTable};

pub const MAGIC: [u8; 4] = *b"OBKD";
pub const FORMAT_VERSION: u16 = 1;

impl Datastore<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(64 + self.len() * (12 + 4 * dim));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());

        let labels = self.labels();
        out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
        for name in labels.names() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        let na = labels.na().map_or(-1i32, |id| id.0 as i32);
        out.extend_from_slice(&na.to_le_bytes());

        for e in self.entries() {
            out.extend_from_slice(&e.id.0.to_le_bytes());
            out.extend_from_slice(&e.label.0.to_le_bytes());
            for v in e.key {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}")));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let dim = r.u32("dim")? as usize;
        let count_at = r.pos;
        let count = r.u64("entry count")?;

        let n_labels = r.u32("label count")? as usize;
        let mut names = Vec::with_capacity(n_labels.min(1 << 16));
        for _ in 0..n_labels {
            let len = r.u32("label length")? as usize;
            let at = r.pos;
            let raw = r.take(len, "label name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| r.error_at(at, "label name is not utf-8".into()))?;
            names.push(name.to_string());
        }
        let mut labels = LabelTable::new(names).map_err(|e| r.error(e.to_string()))?;
        let na_at = r.pos;
        let na = r.i32("na label")?;
        let na = match na {
            -1 => None,
            i if i >= 0 => Some(LabelId(i as u32)),
            other => return Err(r.error_at(na_at, format!("bad na label index {other}"))),
        };
        labels
            .set_na_id(na)
            .map_err(|e| r.error_at(na_at, e.to_string()))?;

        if dim == 0 && count > 0 {
            return Err(r.error_at(6, "zero dimension with non-empty body".into()));
        }
        let record = 12 + 4 * dim as u64;
        let body = (bytes.len() - r.pos) as u64;
        if count.checked_mul(record) != Some(body) {
            return Err(r.error_at(
                count_at,
                format!("header declares {count} entries of dim {dim} ({record} bytes each) but body has {body} bytes"),
            ));
        }

        let mut store = Datastore::empty(dim, labels);
        let mut key = vec![0f32; dim];
        for _ in 0..count {
            let at = r.pos;
            let id = EntryId(r.u64("entry id")?);
            let label = LabelId(r.u32("entry label")?);
            for v in key.iter_mut() {
                *v = f32::from_le_bytes(r.array("key component")?);
            }
            let key = Embedding::new(key.clone()).map_err(|e| r.error_at(at, e.to_string()))?;
            store
                .insert_with_id(id, &key, label)
                .map_err(|e| r.error_at(at, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        file.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, reason: String) -> Error {
        self.error_at(self.pos, reason)
    }

    fn error_at(&self, offset: usize, reason: String) -> Error {
        Error::Format {
            offset: offset as u64,
            reason,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self
            .take(N, what)?
            .try_into()
            .expect("slice length checked"))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
}
