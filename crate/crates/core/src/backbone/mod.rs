//! Forward pass of the reconstruction backbone at toy scale.
//!
//! Views are encoded by a small strided convolutional encoder. A dense
//! UNet (the coarse occupancy stage) and a sparse UNet (the fine feature
//! stage) share one layer layout: per level a residual 3×3×3 convolution
//! block followed by projection-aware cross-attention into the views, a
//! transformer over all bottleneck tokens, and an upsampling path with skip
//! connections. Three small MLP heads decode point features into SDF,
//! color and normal.

mod attention;
mod config;
mod encoder;
mod exec;
mod heads;
mod nn;
mod unet;
mod weights;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::volume::VolumeError;

pub use attention::{cross_attention, pixel_token, prepare_views, softmax_attention, PreparedView};
pub use config::{ArchConfig, EncoderConfig, HeadConfig, LevelConfig, TransformerConfig, UNetConfig};
pub use encoder::{encode_image, encode_views, ViewFeatures};
pub use exec::{Executor, Sequential};
pub use heads::{query_heads, HeadOutput};
pub use nn::{gelu, layer_norm, silu};
pub use unet::{dense_unet_forward, sparse_unet_forward, sparsevoxelformer_forward, voxelformer_forward, Placement};
pub use weights::{config_hash, layer_shapes, Tensor, WeightStore};

pub const VOXELFORMER: &str = "voxelformer";
pub const SPARSE_VOXELFORMER: &str = "sparsevoxelformer";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackboneError {
    #[error("unknown architecture preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid architecture: {0}")]
    InvalidConfig(String),
    #[error("weight {0:?} is missing")]
    MissingWeight(String),
    #[error("weight {path:?} has shape {got:?}, expected {expected:?}")]
    WeightShape { path: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("weight {0:?} is not part of the architecture")]
    UnexpectedWeight(String),
    #[error("weights were built for config hash {got:016x}, expected {expected:016x}")]
    ConfigHash { expected: u64, got: u64 },
    #[error("{what} width {got}, expected {expected}")]
    Width { what: &'static str, expected: usize, got: usize },
    #[error("grid resolution {got:?} does not match the first level ({expected})")]
    Resolution { expected: usize, got: [usize; 3] },
    #[error("image size {width}x{height} is not divisible by stride {stride}")]
    NotDivisible { width: usize, height: usize, stride: usize },
    #[error("sparse grid is empty")]
    EmptyGrid,
    #[error("no views")]
    NoViews,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}
