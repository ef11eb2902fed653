//! Binary checkpoint of a completion state.
//!
//! Layout, all integers and floats little-endian:
//! `SGTC` | version u32 | n1 n2 n3 u64 | n1·n2·n3 f64 values |
//! trace length u64 | trace f64s | iterations u64.

use std::fs;
use std::path::Path;

use crate::completion::CompletionState;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor3;

pub const MAGIC: &[u8; 4] = b"SGTC";
pub const VERSION: u32 = 1;

pub fn encode(state: &CompletionState) -> Vec<u8> {
    let a = &state.a;
    let (n1, n2, n3) = a.dims();
    let mut out = Vec::with_capacity(4 + 4 + 24 + 8 * a.len() + 16 + 8 * state.trace.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [n1, n2, n3] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in a.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(state.trace.len() as u64).to_le_bytes());
    for v in &state.trace {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(state.iterations as u64).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size does not fit in memory".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<CompletionState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dims = (r.usize()?, r.usize()?, r.usize()?);
    let len = dims
        .0
        .checked_mul(dims.1)
        .and_then(|x| x.checked_mul(dims.2))
        .ok_or_else(|| Error::Checkpoint("dimensions overflow".into()))?;
    let values = r.f64s(len)?;
    let trace_len = r.usize()?;
    let trace = r.f64s(trace_len)?;
    let iterations = r.usize()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(CompletionState {
        a: DenseTensor3::from_vec(dims, values)?,
        trace,
        iterations,
        skipped_updates: 0,
    })
}

pub fn save(path: &Path, state: &CompletionState) -> Result<()> {
    fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CompletionState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
