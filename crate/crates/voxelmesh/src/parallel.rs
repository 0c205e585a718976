//! Rayon drivers for the core's row-parallel hooks.

use rayon::prelude::*;
use voxelmesh_core::backbone::Executor;
use voxelmesh_core::sdf::SdfEvaluator;
use voxelmesh_core::volume::{DenseVolume, GridSpec, VolumeError};
use voxelmesh_core::TriMesh;

pub const THREADS_ENV: &str = "VOXELMESH_THREADS";

/// Rows are computed independently and concatenated in index order, so the
/// result is bit-identical to [`voxelmesh_core::backbone::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map(&self, n: usize, width: usize, f: &(dyn Fn(usize) -> Vec<f64> + Sync)) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(f).collect();
        let mut out = Vec::with_capacity(n * width);
        for r in rows {
            out.extend(r);
        }
        out
    }
}

/// Thread cap from `VOXELMESH_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Sizes the global pool. Later calls are ignored by rayon.
pub fn init_threads() {
    if let Some(n) = thread_cap() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Same result as [`voxelmesh_core::sdf::mesh_to_sdf`], voxels spread over
/// the pool.
pub fn mesh_to_sdf(mesh: &TriMesh, spec: &GridSpec) -> Result<DenseVolume, VolumeError> {
    let eval = SdfEvaluator::new(mesh)?;
    let mb = mesh.bounds().ok_or(VolumeError::EmptyMesh)?;
    if !spec.bounds.contains_box(&mb, 1e-9 * spec.bounds.max_extent()) {
        return Err(VolumeError::MeshOutsideBounds);
    }
    let values: Vec<f64> = (0..spec.voxel_count())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = spec.coords(idx);
            eval.signed_distance(&spec.voxel_center(i, j, k))
        })
        .collect();
    DenseVolume::scalar(*spec, values)
}
