//! Reconstruction core for sparse-view textured mesh recovery.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std`; file formats, the command line and parallel drivers
//! live in the companion `voxelmesh` crate.
//!
//! The pipeline stages map onto modules:
//!
//! * [`volume`] and [`sdf`]: regular-grid volumes, mesh to SDF, occupancy,
//!   coarse-to-fine subdivision and trilinear sampling.
//! * [`camera`]: pinhole cameras, posed views, bilinear image sampling.
//! * [`backbone`]: fixture 2D encoder, projection-aware cross-attention and
//!   the dense / sparse voxel UNet-transformers with their MLP heads.
//! * [`meshing`]: dual isosurface extraction with differentiable vertices.
//! * [`render`]: rasterizer with analytic gradients and the six-term loss.
//! * [`enhance`]: normal-driven vertex optimization.
//! * [`eval`]: alignment, Chamfer / F-score and PSNR.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod camera;
pub mod enhance;
pub mod eval;
pub mod math;
pub mod mesh;
pub mod meshing;
pub mod render;
pub mod sdf;
pub mod shapes;
pub mod volume;

pub use camera::{Camera, Image, View, ViewSet};
pub use mesh::{Similarity, TriMesh};
pub use volume::{Aabb, DenseVolume, GridSpec, SparseVoxelGrid};
