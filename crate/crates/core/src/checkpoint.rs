//! Versioned binary checkpoints of named parameter arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "PLDM"
//! version    u32      currently 1
//! dtype      u8       4 (f32) or 8 (f64)
//! kind       u32 length + UTF-8 bytes
//! config     u32 length + UTF-8 bytes, one `key=value` per line
//! count      u32 number of arrays
//! per array: u32 name length + UTF-8 name, u32 rows, u32 cols,
//!            rows*cols values row-major in the declared dtype
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::diffmath::Parameters;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PLDM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: String,
    pub config: Vec<(String, String)>,
    pub params: Vec<(String, Array2<T>)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(
        kind: &str,
        config: Vec<(String, String)>,
        params: impl IntoIterator<Item = (String, Array2<T>)>,
    ) -> Self {
        Self { kind: kind.into(), config, params: params.into_iter().collect() }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(T::BYTES);
        put_str(&mut out, &self.kind);
        let cfg: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_str(&mut out, &cfg);
        put_u32(&mut out, self.params.len() as u32);
        for (name, arr) in &self.params {
            put_str(&mut out, name);
            put_u32(&mut out, arr.nrows() as u32);
            put_u32(&mut out, arr.ncols() as u32);
            for &v in arr.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dtype = r.take(1)?[0];
        if dtype != T::BYTES {
            return Err(Error::Checkpoint(format!("stored with {dtype}-byte floats, loading as {}", T::BYTES)));
        }
        let kind = r.string()?;
        let config = r
            .string()?
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Checkpoint(format!("bad config line {l:?}")))
            })
            .collect::<Result<_>>()?;
        let count = r.u32()?;
        let mut params = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * T::BYTES as usize)?;
            let vals = raw.chunks_exact(T::BYTES as usize).map(T::read_le).collect();
            params.push((name, Array2::from_shape_vec((rows, cols), vals).unwrap()));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { kind, config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copies arrays into `target`, matching by name and shape.
    pub fn restore_into<P: Parameters<T>>(&self, target: &mut P) -> Result<()> {
        let names = target.param_names();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!("{} arrays stored, {} expected", self.params.len(), names.len())));
        }
        for (name, dst) in names.iter().zip(target.params_mut()) {
            let (_, src) = self
                .params
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if src.dim() != dst.dim() {
                return Err(Error::Checkpoint(format!("{name}: stored {:?}, expected {:?}", src.dim(), dst.dim())));
            }
            dst.assign(src);
        }
        Ok(())
    }
}
