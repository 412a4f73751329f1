//! `R4TE` embedding database file.
//!
//! Little-endian: magic `R4TE`, version `u32 = 1`, count `u64`, dim `u32`,
//! then `count` records of `[id u64, dim × f32]`. No padding.

use std::fs;
use std::path::Path;

use super::{Embedding, EmbeddingDb};
use crate::error::{Error, Result};
use crate::format::{check_records, Reader, Writer};

const MAGIC: &[u8; 4] = b"R4TE";
const VERSION: u32 = 1;

pub fn write_db(db: &EmbeddingDb) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(db.len() as u64);
    w.u32(db.dim() as u32);
    for (id, v) in db.iter() {
        w.u64(id);
        w.f32_slice(v);
    }
    w.into_bytes()
}

pub fn read_db(bytes: &[u8]) -> Result<EmbeddingDb> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u64("count")?;
    let dim_at = r.offset();
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::format(dim_at, "dimension is zero"));
    }
    check_records(&r, count, 8 + 4 * dim)?;
    let mut items = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = r.offset();
        let id = r.u64("record id")?;
        let values = r.f32_vec(dim, "record values")?;
        let e = Embedding::new(values)
            .map_err(|e| Error::format(at, format!("record {i}: {e}")))?;
        items.push((id, e));
    }
    r.finish()?;
    EmbeddingDb::new(dim, items).map_err(|e| Error::format(0, e.to_string()))
}

pub fn save_db(db: &EmbeddingDb, path: &Path) -> Result<()> {
    fs::write(path, write_db(db))?;
    Ok(())
}

pub fn load_db(path: &Path) -> Result<EmbeddingDb> {
    read_db(&fs::read(path)?)
}
