//! Regular-grid volumes.
//!
//! Two sampling lattices are in play:
//!
//! * [`DenseVolume`] stores one value (or feature vector) per voxel, sampled
//!   at the voxel **center** `min + (i + 0.5) * voxel_size`.
//! * [`SparseVoxelGrid`] stores features at voxel **corners**
//!   `min + i * voxel_size` for its listed coordinates, so trilinear
//!   interpolation inside voxel `i` reads coordinates `i` and `i + 1`.
//!
//! A dense volume can be viewed as a corner lattice by shifting its bounds
//! down by half a voxel; [`GridSpec::corner_aligned`] performs that shift.

use alloc::vec::Vec;

use thiserror::Error;

use crate::math::{floor, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    ResolutionTooSmall([usize; 3]),
    #[error("grid bounds must satisfy min < max on every axis")]
    EmptyBounds,
    #[error("volume expects {expected} values but got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("occupancy band must be positive and finite, got {0}")]
    InvalidBand(f64),
    #[error("expected a scalar volume, got {0} channels")]
    NotScalar(usize),
    #[error("occupancy volume contains a non-binary value {0}")]
    NotBinary(f64),
    #[error("subdivision factor must be at least 2, got {0}")]
    FactorTooSmall(usize),
    #[error("subdivided resolution {resolution} x factor {factor} overflows the u32 coordinate range")]
    CoordinateOverflow { resolution: usize, factor: usize },
    #[error("point ({x}, {y}, {z}) lies outside the grid bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("sparse coordinates must be unique and sorted; violation at entry {0}")]
    CoordsNotSorted(usize),
    #[error("sparse coordinate {coord:?} is outside resolution {resolution:?}")]
    CoordOutOfRange { coord: [u32; 3], resolution: [usize; 3] },
    #[error("volume values must be finite")]
    NonFinite,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("mesh is not closed: {open_edges} open edges")]
    OpenMesh { open_edges: usize },
    #[error("mesh does not fit within the grid bounds")]
    MeshOutsideBounds,
    #[error("volume grids differ")]
    GridMismatch,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Cube of the given half extent centered at the origin.
    pub fn centered_cube(half: f64) -> Self {
        Self::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Self::new(first, first);
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().max()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    pub fn contains_box(&self, other: &Aabb, tol: f64) -> bool {
        self.contains(&other.min, tol) && self.contains(&other.max, tol)
    }

    pub fn translated(&self, t: &Vec3) -> Self {
        Self::new(self.min + t, self.max + t)
    }
}

/// Resolution and world-space bounds of a regular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
}

impl GridSpec {
    pub fn new(resolution: [usize; 3], bounds: Aabb) -> Result<Self, VolumeError> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(VolumeError::ResolutionTooSmall(resolution));
        }
        if (0..3).any(|a| !(bounds.min[a] < bounds.max[a])) {
            return Err(VolumeError::EmptyBounds);
        }
        Ok(Self { resolution, bounds })
    }

    pub fn cubic(resolution: usize, bounds: Aabb) -> Result<Self, VolumeError> {
        Self::new([resolution; 3], bounds)
    }

    /// Cubic grid over the unit cube centered at the origin.
    pub fn unit(resolution: usize) -> Result<Self, VolumeError> {
        Self::cubic(resolution, Aabb::centered_cube(0.5))
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / self.resolution[0] as f64,
            e.y / self.resolution[1] as f64,
            e.z / self.resolution[2] as f64,
        )
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.voxel_size().norm()
    }

    /// Smallest voxel edge length.
    pub fn min_voxel_size(&self) -> f64 {
        self.voxel_size().min()
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.resolution;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let vs = self.voxel_size();
        self.bounds.min + Vec3::new((i as f64 + 0.5) * vs.x, (j as f64 + 0.5) * vs.y, (k as f64 + 0.5) * vs.z)
    }

    pub fn lattice_point(&self, c: [u32; 3]) -> Vec3 {
        let vs = self.voxel_size();
        self.bounds.min + Vec3::new(c[0] as f64 * vs.x, c[1] as f64 * vs.y, c[2] as f64 * vs.z)
    }

    /// Grid whose voxel centers coincide with this grid's corner lattice.
    pub fn corner_aligned(&self) -> Self {
        let half = self.voxel_size() * 0.5;
        Self { resolution: self.resolution, bounds: Aabb::new(self.bounds.min - half, self.bounds.max - half) }
    }

    pub fn with_resolution(&self, resolution: usize) -> Result<Self, VolumeError> {
        Self::cubic(resolution, self.bounds)
    }

    fn check_inside(&self, p: &Vec3) -> Result<(), VolumeError> {
        let tol = 1e-9 * self.bounds.max_extent();
        if self.bounds.contains(p, tol) {
            Ok(())
        } else {
            Err(VolumeError::OutOfBounds { x: p.x, y: p.y, z: p.z })
        }
    }
}

/// Result of a trilinear query.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub values: Vec<f64>,
    /// Number of the 8 enclosing corners that were absent and read as zero.
    /// Always 0 for dense volumes.
    pub missing_corners: u8,
}

impl Sample {
    pub fn is_complete(&self) -> bool {
        self.missing_corners == 0
    }
}

/// Scalar or feature field with one entry per voxel center.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    pub spec: GridSpec,
    pub channels: usize,
    /// `channels` values per voxel, voxels in x-fastest order.
    pub values: Vec<f64>,
}

impl DenseVolume {
    pub fn new(spec: GridSpec, channels: usize, values: Vec<f64>) -> Result<Self, VolumeError> {
        let expected = spec.voxel_count() * channels;
        if values.len() != expected || channels == 0 {
            return Err(VolumeError::ValueCount { expected, got: values.len() });
        }
        Ok(Self { spec, channels, values })
    }

    pub fn scalar(spec: GridSpec, values: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(spec, 1, values)
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self { spec, channels: 1, values: alloc::vec![value; spec.voxel_count()] }
    }

    /// Scalar volume from a function evaluated at every voxel center.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(Vec3) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.voxel_count());
        let [nx, ny, nz] = spec.resolution;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(spec.voxel_center(i, j, k)));
                }
            }
        }
        Self { spec, channels: 1, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k) * self.channels]
    }

    pub fn feature(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let o = self.spec.index(i, j, k) * self.channels;
        &self.values[o..o + self.channels]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn require_scalar(&self) -> Result<(), VolumeError> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(VolumeError::NotScalar(self.channels))
        }
    }

    /// Trilinear interpolation over the voxel-center lattice. Points inside
    /// the bounds but outside the outermost centers are clamped to them.
    pub fn sample(&self, p: &Vec3) -> Result<Sample, VolumeError> {
        self.spec.check_inside(p)?;
        let vs = self.spec.voxel_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.spec.resolution[a];
            let g = ((p[a] - self.spec.bounds.min[a]) / vs[a] - 0.5).clamp(0.0, (n - 1) as f64);
            let b = (floor(g) as usize).min(n - 2);
            base[a] = b;
            frac[a] = g - b as f64;
        }
        let mut values = alloc::vec![0.0; self.channels];
        for corner in 0..8usize {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w = (0..3).map(|a| if d[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product::<f64>();
            if w == 0.0 {
                continue;
            }
            let f = self.feature(base[0] + d[0], base[1] + d[1], base[2] + d[2]);
            for (v, x) in values.iter_mut().zip(f) {
                *v += w * x;
            }
        }
        Ok(Sample { values, missing_corners: 0 })
    }

    /// Trilinear resampling of a scalar volume onto another grid's centers.
    pub fn resample(&self, spec: GridSpec) -> Result<DenseVolume, VolumeError> {
        self.require_scalar()?;
        let mut err = None;
        let out = DenseVolume::from_fn(spec, |p| {
            let q = Vec3::new(
                p.x.clamp(self.spec.bounds.min.x, self.spec.bounds.max.x),
                p.y.clamp(self.spec.bounds.min.y, self.spec.bounds.max.y),
                p.z.clamp(self.spec.bounds.min.z, self.spec.bounds.max.z),
            );
            match self.sample(&q) {
                Ok(s) => s.values[0],
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

/// Occupancy is 1 exactly where `|sdf| <= band`.
pub fn occupancy_from_sdf(sdf: &DenseVolume, band: f64) -> Result<DenseVolume, VolumeError> {
    if !(band > 0.0) || !band.is_finite() {
        return Err(VolumeError::InvalidBand(band));
    }
    sdf.require_scalar()?;
    let values = sdf.values.iter().map(|v| if v.abs() <= band { 1.0 } else { 0.0 }).collect();
    Ok(DenseVolume { spec: sdf.spec, channels: 1, values })
}

/// Default occupancy band: 1.5 voxel sizes of the given grid.
pub fn default_band(spec: &GridSpec) -> f64 {
    1.5 * spec.min_voxel_size()
}

/// Features at sorted, unique corner-lattice coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    pub spec: GridSpec,
    pub channels: usize,
    pub coords: Vec<[u32; 3]>,
    /// `channels` values per coordinate, in `coords` order.
    pub features: Vec<f64>,
}

impl SparseVoxelGrid {
    pub fn new(spec: GridSpec, channels: usize, coords: Vec<[u32; 3]>, features: Vec<f64>) -> Result<Self, VolumeError> {
        for (i, c) in coords.iter().enumerate() {
            if (0..3).any(|a| c[a] as usize >= spec.resolution[a]) {
                return Err(VolumeError::CoordOutOfRange { coord: *c, resolution: spec.resolution });
            }
            if i > 0 && coords[i - 1] >= *c {
                return Err(VolumeError::CoordsNotSorted(i));
            }
        }
        if channels == 0 || features.len() != coords.len() * channels {
            return Err(VolumeError::ValueCount { expected: coords.len() * channels, got: features.len() });
        }
        Ok(Self { spec, channels, coords, features })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn find(&self, c: [u32; 3]) -> Option<usize> {
        self.coords.binary_search(&c).ok()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    /// Same coordinates with new features.
    pub fn with_features(&self, channels: usize, features: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(self.spec, channels, self.coords.clone(), features)
    }

    /// Trilinear interpolation over the corner lattice. Corners missing from
    /// the grid contribute zero and are counted in [`Sample::missing_corners`].
    pub fn sample(&self, p: &Vec3) -> Result<Sample, VolumeError> {
        self.spec.check_inside(p)?;
        let vs = self.spec.voxel_size();
        let mut base = [0u32; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.spec.resolution[a];
            let g = ((p[a] - self.spec.bounds.min[a]) / vs[a]).clamp(0.0, n as f64);
            let b = (floor(g) as usize).min(n - 1);
            base[a] = b as u32;
            frac[a] = g - b as f64;
        }
        let mut values = alloc::vec![0.0; self.channels];
        let mut missing = 0u8;
        for corner in 0..8u32 {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w = (0..3).map(|a| if d[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product::<f64>();
            match self.find([base[0] + d[0], base[1] + d[1], base[2] + d[2]]) {
                Some(idx) => {
                    for (v, x) in values.iter_mut().zip(self.feature(idx)) {
                        *v += w * x;
                    }
                }
                None => missing += 1,
            }
        }
        Ok(Sample { values, missing_corners: missing })
    }
}

/// Children of every occupied coarse voxel at `factor` times the resolution,
/// each initialized with the shared `token`.
pub fn subdivide_occupied(occ: &DenseVolume, factor: usize, token: &[f64]) -> Result<SparseVoxelGrid, VolumeError> {
    if factor < 2 {
        return Err(VolumeError::FactorTooSmall(factor));
    }
    occ.require_scalar()?;
    if let Some(v) = occ.values.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(VolumeError::NotBinary(*v));
    }
    if token.is_empty() {
        return Err(VolumeError::ChannelMismatch { expected: 1, got: 0 });
    }
    let mut resolution = [0usize; 3];
    for a in 0..3 {
        let r = occ.spec.resolution[a];
        resolution[a] = r
            .checked_mul(factor)
            .filter(|n| *n <= u32::MAX as usize)
            .ok_or(VolumeError::CoordinateOverflow { resolution: r, factor })?;
    }
    let spec = GridSpec::new(resolution, occ.spec.bounds)?;
    let f = factor as u32;
    let mut coords = Vec::new();
    for (idx, v) in occ.values.iter().enumerate() {
        if *v == 1.0 {
            let [i, j, k] = occ.spec.coords(idx).map(|c| c as u32);
            for dz in 0..f {
                for dy in 0..f {
                    for dx in 0..f {
                        coords.push([i * f + dx, j * f + dy, k * f + dz]);
                    }
                }
            }
        }
    }
    coords.sort_unstable();
    let features = coords.iter().flat_map(|_| token.iter().copied()).collect();
    SparseVoxelGrid::new(spec, token.len(), coords, features)
}
