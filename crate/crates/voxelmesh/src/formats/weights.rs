//! `MFW1` weight files: magic, config hash (u64), tensor count (u32), then
//! per tensor the UTF-8 path (u32 length + bytes), rank (u32), dims (u32
//! each) and f32 data.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use voxelmesh_core::backbone::{Tensor, WeightStore};

use super::{checked_len, expect_magic, load_with, read_f32s, read_u32, read_u64, save_with, write_f32s};
use crate::error::{invalid, Result};

pub const MAGIC: &[u8; 4] = b"MFW1";

pub fn write_weights(w: &mut impl Write, store: &WeightStore) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&store.config_hash.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (path, t) in store.tensors() {
        w.write_all(&(path.len() as u32).to_le_bytes())?;
        w.write_all(path.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        write_f32s(w, &t.data)?;
    }
    Ok(())
}

/// Reads the tensors; checking them against an architecture is left to
/// [`WeightStore::validate`].
pub fn read_weights(r: &mut impl Read) -> io::Result<WeightStore> {
    expect_magic(r, MAGIC)?;
    let hash = read_u64(r)?;
    let count = read_u32(r)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = checked_len(read_u32(r)? as u64, 4096)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| invalid("tensor path is not UTF-8"))?;
        let rank = checked_len(read_u32(r)? as u64, 8)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let n = shape.iter().try_fold(1u64, |a, d| a.checked_mul(*d as u64)).ok_or_else(|| invalid("tensor too large"))?;
        let data = read_f32s(r, checked_len(n, 1 << 31)?)?;
        if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(invalid(format!("duplicate tensor {name:?}")));
        }
    }
    Ok(WeightStore::from_tensors(hash, tensors))
}

pub fn save_weights(path: &Path, store: &WeightStore) -> Result<()> {
    save_with(path, |w| write_weights(w, store))
}

pub fn load_weights(path: &Path) -> Result<WeightStore> {
    load_with(path, read_weights)
}
