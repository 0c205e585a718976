//! On-disk formats. Every binary format is little-endian and starts with a
//! four-byte magic.

pub mod image;
pub mod mesh;
pub mod rig;
pub mod volume;
pub mod weights;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, IoContext, Result};

pub(crate) fn read_exact<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub(crate) fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    Ok(read_exact::<1>(r)?[0])
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_f32(r: &mut impl Read) -> io::Result<f32> {
    Ok(f32::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n.checked_mul(4).ok_or_else(|| invalid("length overflow"))?];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub(crate) fn write_f32s(w: &mut impl Write, values: &[f64]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&bytes)
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> io::Result<()> {
    let got: [u8; 4] = read_exact(r)?;
    if &got != magic {
        return Err(invalid(format!("expected magic {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(&got))));
    }
    Ok(())
}

/// Length prefix that must fit in the remaining input; guards allocations
/// against corrupt headers.
pub(crate) fn checked_len(n: u64, limit: u64) -> io::Result<usize> {
    if n > limit {
        return Err(invalid(format!("length {n} exceeds limit {limit}")));
    }
    Ok(n as usize)
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).at(path)?))
}

/// Creates parent directories as needed.
pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    Ok(BufWriter::new(File::create(path).at(path)?))
}

/// Runs `f` on a buffered writer for `path` and flushes it.
pub(crate) fn save_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).at(path)
}

pub(crate) fn load_with<T>(path: &Path, f: impl FnOnce(&mut BufReader<File>) -> io::Result<T>) -> Result<T> {
    let mut r = open(path)?;
    f(&mut r).at(path)
}
