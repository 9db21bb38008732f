//! Bank file format.
//!
//! ```text
//! magic    8 bytes  "TXBANK01" (f32 weights) or "TXBANK02" (f64 weights)
//! count    u32
//! filters  count x { u32 size, 3*size*size weights in (channel, row, col) order }
//! metadata u32 length, then that many bytes of UTF-8 JSON
//! ```
//!
//! All integers and floats are little-endian. Banks whose weights are all
//! exactly representable in single precision (every random bank) are written
//! as `TXBANK01`; anything else falls back to `TXBANK02` so that loading a
//! saved bank always reproduces it bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BankMetadata, Filter, FilterBank};
use crate::error::{Error, Result};
use crate::image::CHANNELS;

const MAGIC_F32: &[u8; 8] = b"TXBANK01";
const MAGIC_F64: &[u8; 8] = b"TXBANK02";

fn f32_exact(bank: &FilterBank) -> bool {
    bank.filters()
        .iter()
        .flat_map(|f| f.weights())
        .all(|&w| (w as f32) as f64 == w)
}

pub fn write_bank<W: Write>(bank: &FilterBank, w: &mut W) -> std::io::Result<()> {
    let single = f32_exact(bank);
    w.write_all(if single { MAGIC_F32 } else { MAGIC_F64 })?;
    w.write_all(&(bank.len() as u32).to_le_bytes())?;
    for f in bank.filters() {
        w.write_all(&(f.size() as u32).to_le_bytes())?;
        for &v in f.weights() {
            if single {
                w.write_all(&(v as f32).to_le_bytes())?;
            } else {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    let json = serde_json::to_vec(bank.metadata()).map_err(std::io::Error::other)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)
}

pub fn save_bank(bank: &FilterBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_bank(bank, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptFile(format!("bank truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a bank from its serialized bytes.
pub fn read_bank(bytes: &[u8]) -> Result<FilterBank> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8)?;
    let single = match magic {
        m if m == MAGIC_F32 => true,
        m if m == MAGIC_F64 => false,
        _ => return Err(Error::CorruptFile("bad magic, not a filter bank".into())),
    };
    let count = cur.u32()? as usize;
    let mut filters = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let size = cur.u32()? as usize;
        let n = size
            .checked_mul(size)
            .and_then(|v| v.checked_mul(CHANNELS))
            .ok_or_else(|| Error::CorruptFile(format!("filter {i}: absurd size {size}")))?;
        let width = if single { 4 } else { 8 };
        let raw = cur.take(
            n.checked_mul(width)
                .ok_or_else(|| Error::CorruptFile("overflow".into()))?,
        )?;
        let weights = if single {
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        };
        filters.push(Filter::new(size, weights).map_err(|e| Error::CorruptFile(format!("filter {i}: {e}")))?);
    }
    let len = cur.u32()? as usize;
    let json = cur.take(len)?;
    if cur.pos != bytes.len() {
        return Err(Error::CorruptFile("trailing bytes after metadata".into()));
    }
    let metadata: BankMetadata =
        serde_json::from_slice(json).map_err(|e| Error::CorruptFile(format!("metadata: {e}")))?;
    FilterBank::new(filters, metadata).map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<FilterBank> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_bank(&bytes)
}
