//! `VXM1` volumes.
//!
//! Header: magic, resolution (3×u32), bounds (min xyz, max xyz as f32),
//! dtype (u8). Dtype 0 is an f32 scalar field, 1 a u8 binary field, 2 an
//! f32 feature field preceded by its channel count (u32). Values are x
//! fastest. Dtype 3 is a sparse grid: channel count (u32), site count
//! (u64), the u32 coordinate triplets, then the f32 features.

use std::io::{self, Read, Write};
use std::path::Path;

use voxelmesh_core::volume::{Aabb, DenseVolume, GridSpec, SparseVoxelGrid};
use voxelmesh_core::math::Vec3;

use super::{checked_len, expect_magic, load_with, read_f32, read_f32s, read_u32, read_u64, read_u8, save_with, write_f32s};
use crate::error::{invalid, Result};

pub const MAGIC: &[u8; 4] = b"VXM1";
pub const DTYPE_SCALAR: u8 = 0;
pub const DTYPE_BINARY: u8 = 1;
pub const DTYPE_FEATURE: u8 = 2;
pub const DTYPE_SPARSE: u8 = 3;

const MAX_VALUES: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeFile {
    Dense(DenseVolume),
    Sparse(SparseVoxelGrid),
}

impl VolumeFile {
    pub fn into_dense(self) -> io::Result<DenseVolume> {
        match self {
            VolumeFile::Dense(v) => Ok(v),
            VolumeFile::Sparse(_) => Err(invalid("expected a dense volume, found a sparse grid")),
        }
    }
}

fn write_header(w: &mut impl Write, spec: &GridSpec, dtype: u8) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for r in spec.resolution {
        let r = u32::try_from(r).map_err(|_| invalid("resolution exceeds u32"))?;
        w.write_all(&r.to_le_bytes())?;
    }
    let b = &spec.bounds;
    write_f32s(w, &[b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z])?;
    w.write_all(&[dtype])
}

/// Occupancy-like volumes (one channel, only 0 and 1) are stored as bytes;
/// other scalar fields as f32; multi-channel fields as features.
pub fn write_dense(w: &mut impl Write, vol: &DenseVolume) -> io::Result<()> {
    if vol.channels > 1 {
        write_header(w, &vol.spec, DTYPE_FEATURE)?;
        w.write_all(&(vol.channels as u32).to_le_bytes())?;
        write_f32s(w, &vol.values)
    } else if vol.is_binary() {
        write_header(w, &vol.spec, DTYPE_BINARY)?;
        let bytes: Vec<u8> = vol.values.iter().map(|v| (*v == 1.0) as u8).collect();
        w.write_all(&bytes)
    } else {
        write_header(w, &vol.spec, DTYPE_SCALAR)?;
        write_f32s(w, &vol.values)
    }
}

pub fn write_sparse(w: &mut impl Write, grid: &SparseVoxelGrid) -> io::Result<()> {
    write_header(w, &grid.spec, DTYPE_SPARSE)?;
    w.write_all(&(grid.channels as u32).to_le_bytes())?;
    w.write_all(&(grid.coords.len() as u64).to_le_bytes())?;
    let mut bytes = Vec::with_capacity(grid.coords.len() * 12);
    for c in &grid.coords {
        for v in c {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes)?;
    write_f32s(w, &grid.features)
}

pub fn read_volume(r: &mut impl Read) -> io::Result<VolumeFile> {
    expect_magic(r, MAGIC)?;
    let mut resolution = [0usize; 3];
    for v in &mut resolution {
        *v = read_u32(r)? as usize;
    }
    let mut b = [0.0f64; 6];
    for v in &mut b {
        *v = read_f32(r)? as f64;
    }
    let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
    let spec = GridSpec::new(resolution, bounds).map_err(|e| invalid(e.to_string()))?;
    let count = resolution.iter().map(|r| *r as u64).product::<u64>();
    let bad = |e: voxelmesh_core::volume::VolumeError| invalid(e.to_string());
    match read_u8(r)? {
        DTYPE_SCALAR => {
            let values = read_f32s(r, checked_len(count, MAX_VALUES)?)?;
            Ok(VolumeFile::Dense(DenseVolume::scalar(spec, values).map_err(bad)?))
        }
        DTYPE_BINARY => {
            let mut bytes = vec![0u8; checked_len(count, MAX_VALUES)?];
            r.read_exact(&mut bytes)?;
            if let Some(v) = bytes.iter().find(|v| **v > 1) {
                return Err(invalid(format!("binary volume holds value {v}")));
            }
            Ok(VolumeFile::Dense(DenseVolume::scalar(spec, bytes.iter().map(|v| *v as f64).collect()).map_err(bad)?))
        }
        DTYPE_FEATURE => {
            let channels = read_u32(r)? as u64;
            let values = read_f32s(r, checked_len(count * channels, MAX_VALUES)?)?;
            Ok(VolumeFile::Dense(DenseVolume::new(spec, channels as usize, values).map_err(bad)?))
        }
        DTYPE_SPARSE => {
            let channels = read_u32(r)? as u64;
            let n = checked_len(read_u64(r)?, count.min(MAX_VALUES))?;
            let mut coords = Vec::with_capacity(n);
            for _ in 0..n {
                coords.push([read_u32(r)?, read_u32(r)?, read_u32(r)?]);
            }
            let features = read_f32s(r, checked_len(n as u64 * channels, MAX_VALUES)?)?;
            Ok(VolumeFile::Sparse(SparseVoxelGrid::new(spec, channels as usize, coords, features).map_err(bad)?))
        }
        other => Err(invalid(format!("unknown volume dtype {other}"))),
    }
}

pub fn save_dense(path: &Path, vol: &DenseVolume) -> Result<()> {
    save_with(path, |w| write_dense(w, vol))
}

pub fn save_sparse(path: &Path, grid: &SparseVoxelGrid) -> Result<()> {
    save_with(path, |w| write_sparse(w, grid))
}

pub fn load_volume(path: &Path) -> Result<VolumeFile> {
    load_with(path, read_volume)
}

pub fn load_dense(path: &Path) -> Result<DenseVolume> {
    load_with(path, |r| read_volume(r)?.into_dense())
}
