//! Preprocessed dataset cache (`.ffds`). Layout, all integers little-endian:
//!
//! ```text
//! magic           8 bytes  "FFDSET\0\0"
//! version         u32      1
//! name            string
//! n, D, C         u64 x 3
//! feature names   D x string
//! features        n*D x f64, row-major
//! labels          n x u32
//! attribute count u32
//! per attribute   string name, then n x u8 group ids
//! ```
//!
//! `string` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::TabularDataset;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"FFDSET\0\0";
pub const CACHE_VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_cache<W: Write>(mut w: W, ds: &TabularDataset) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    write_str(&mut w, ds.name())?;
    for v in [ds.len(), ds.dim(), ds.num_classes()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for name in ds.feature_names() {
        write_str(&mut w, name)?;
    }
    let mut block = Vec::with_capacity(ds.features().len() * 8);
    for v in ds.features() {
        block.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&block)?;
    for &y in ds.labels() {
        w.write_all(&(y as u32).to_le_bytes())?;
    }
    let sensitive = ds.sensitive_map();
    w.write_all(&(sensitive.len() as u32).to_le_bytes())?;
    for (name, groups) in sensitive {
        write_str(&mut w, name)?;
        w.write_all(groups)?;
    }
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::config("cache dimension does not fit in memory"))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.bytes(len)?).map_err(|_| Error::config("cache contains invalid UTF-8"))
    }
}

pub fn read_cache<R: Read>(r: R) -> Result<TabularDataset> {
    let mut r = Reader(r);
    if r.bytes(8)? != CACHE_MAGIC {
        return Err(Error::config("not a dataset cache (bad magic)"));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::config(format!("unsupported dataset cache version {version}")));
    }
    let name = r.string()?;
    let (n, dim, classes) = (r.u64()?, r.u64()?, r.u64()?);
    let names = (0..dim).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let features = r
        .bytes(n * dim * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = r
        .bytes(n * 4)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let mut sensitive = BTreeMap::new();
    for _ in 0..r.u32()? {
        let attr = r.string()?;
        sensitive.insert(attr, r.bytes(n)?);
    }
    TabularDataset::new(name, names, features, labels, classes, sensitive)
}
