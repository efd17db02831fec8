//! Versioned binary checkpoints of named matrices.
//!
//! Layout: magic `"SPCK"`, version `u32`, then one record per tensor until end
//! of file: name length `u16`, UTF-8 name, rows `u32`, cols `u32`, and
//! `rows·cols` little-endian `f64` values in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::net::Model;

pub const MAGIC: &[u8; 4] = b"SPCK";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[(String, &DenseMatrix)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, m) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Parse(format!("checkpoint truncated while reading {what} at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, DenseMatrix)>> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    while c.at < bytes.len() {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        let size = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Parse(format!("tensor {name} has an impossible shape {rows}×{cols}")))?;
        let raw = c.take(size, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        // Non-finite values are kept so diverged runs can still be inspected.
        out.push((name, DenseMatrix::from_raw(rows, cols, data)));
    }
    Ok(out)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(&model.parameters())?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Overwrites `model`'s parameters from a checkpoint with the same layout.
pub fn load_into(model: &mut Model, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes)?;
    let mut params = model.parameters_mut();
    if tensors.len() != params.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            params.len()
        )));
    }
    for ((name, m), (pname, p)) in tensors.into_iter().zip(params.iter_mut()) {
        if name != *pname || m.shape() != p.shape() {
            return Err(Error::Parse(format!(
                "checkpoint tensor {name} {:?} does not match model tensor {pname} {:?}",
                m.shape(),
                p.shape()
            )));
        }
        **p = m;
    }
    Ok(())
}
