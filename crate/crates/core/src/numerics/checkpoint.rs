//! Binary parameter files.
//!
//! Layout: the magic bytes `ICTUS01`, then one record per tensor until EOF:
//!
//! ```text
//! u32 LE  name length in bytes
//! [u8]    UTF-8 name
//! u32 LE  rank
//! u64 LE  each dimension
//! f64 LE  values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NumericsError, ParameterStore, Tensor};

pub const MAGIC: &[u8; 7] = b"ICTUS01";

fn bad(msg: impl Into<String>) -> NumericsError {
    NumericsError::Checkpoint(msg.into())
}

pub fn encode<'a>(
    out: &mut impl Write,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), NumericsError> {
    out.write_all(MAGIC)?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u32).to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NumericsError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing ICTUS01 magic"));
    }
    let mut pos = MAGIC.len();
    let take = |n: usize, pos: &mut usize, what: &str| -> Result<&[u8], NumericsError> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("truncated {what} at byte {pos}")))?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    let mut out = Vec::new();
    while pos < bytes.len() {
        let len = u32::from_le_bytes(take(4, &mut pos, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(len, &mut pos, "name")?)
            .map_err(|_| bad(format!("invalid UTF-8 name before byte {pos}")))?
            .to_string();
        let rank = u32::from_le_bytes(take(4, &mut pos, "rank")?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8, &mut pos, "dimension")?.try_into().unwrap()) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("shape overflow for `{name}`")))?;
        let raw = take(
            count.checked_mul(8).ok_or_else(|| bad("size overflow"))?,
            &mut pos,
            "values",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save(path: &Path, params: &ParameterStore) -> Result<(), NumericsError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode(&mut w, params.iter().map(|(k, v)| (k.as_str(), v)))?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParameterStore, NumericsError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut store = ParameterStore::new();
    for (name, t) in decode(&bytes)? {
        if store.contains(&name) {
            return Err(bad(format!("duplicate record `{name}`")));
        }
        store.insert(name, t);
    }
    Ok(store)
}
