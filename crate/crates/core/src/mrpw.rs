//! The MRPW container: a checksummed little-endian bundle of named `f32`
//! arrays plus a UTF-8 JSON manifest.
//!
//! ```text
//! header   "MRPW" | version u32 | crc32(payload) u32 | entry count u32 | manifest length u32
//! payload  manifest bytes | entries
//! entry    name length u32 | name | ndim u32 | dims u32 x ndim | f32 x prod(dims)
//! ```
//!
//! The CRC is the IEEE CRC-32 of every byte following the 20-byte header.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MRPW";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// A shaped `f32` array stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl ParamArray {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Input(format!(
                "array of shape {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Raw contents of an MRPW file: the manifest text and entries in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: String,
    pub entries: Vec<(String, ParamArray)>,
    /// The checksum stored in (and verified against) the header.
    pub checksum: u32,
}

impl Container {
    pub fn new(manifest: String, entries: Vec<(String, ParamArray)>) -> Self {
        let mut c = Self {
            manifest,
            entries,
            checksum: 0,
        };
        c.checksum = crc32fast::hash(&c.payload());
        c
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Consume the container into a name-indexed map.
    pub fn into_map(self) -> HashMap<String, ParamArray> {
        self.entries.into_iter().collect()
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.manifest.as_bytes());
        for (name, array) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(array.dims.len() as u32).to_le_bytes());
            for &d in &array.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &array.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let mut header = Reader::new(&bytes[4..HEADER_LEN]);
        let version = header.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let stored = header.u32()?;
        let entry_count = header.u32()? as usize;
        let manifest_len = header.u32()? as usize;

        let payload = &bytes[HEADER_LEN..];
        let computed = crc32fast::hash(payload);
        if computed != stored {
            return Err(Error::Corrupt { stored, computed });
        }

        let mut r = Reader::new(payload);
        let manifest = std::str::from_utf8(r.take(manifest_len)?)
            .map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?
            .to_string();

        let mut entries: Vec<(String, ParamArray)> = Vec::with_capacity(entry_count);
        for i in 0..entry_count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Format(format!("entry {i} name is not UTF-8: {e}")))?
                .to_string();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(Error::Format(format!("duplicate entry `{name}`")));
            }
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("entry `{name}` shape {dims:?} overflows")))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| {
                Error::Format(format!("entry `{name}` shape {dims:?} overflows"))
            })?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Manifest {
                    entry: name,
                    message: format!("non-finite value at flat index {pos}"),
                });
            }
            entries.push((name, ParamArray { dims, data }));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after {entry_count} entries",
                r.remaining()
            )));
        }
        Ok(Self {
            manifest,
            entries,
            checksum: stored,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at payload offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
