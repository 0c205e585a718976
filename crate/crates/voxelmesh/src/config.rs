//! Pipeline configuration, read from TOML (or JSON by extension).
//!
//! Every field has a default and the defaults run the toy architecture.
//! Command-line flags are applied after the file, so a flag always wins.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxelmesh_core::backbone::{ArchConfig, LevelConfig};
use voxelmesh_core::enhance::EnhanceParams;
use voxelmesh_core::eval::{EvalParams, DEFAULT_POINTS, DEFAULT_PSNR_CAP, DEFAULT_THRESHOLD};
use voxelmesh_core::math::fnv1a;
use voxelmesh_core::render::LossWeights;
use voxelmesh_core::volume::Aabb;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Architecture preset, `toy` or `paper`.
    pub arch: String,
    pub seed: u64,
    /// MFW1 weight file; seeded weights are generated when absent.
    pub weights: Option<PathBuf>,
    pub grid: GridConfig,
    pub occupancy: OccupancyConfig,
    pub skip_enhance: bool,
    pub loss: LossWeights,
    pub enhance: EnhanceParams,
    pub eval: EvalConfig,
    pub fixture: FixtureConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            arch: "toy".into(),
            seed: 0,
            weights: None,
            grid: GridConfig::default(),
            occupancy: OccupancyConfig::default(),
            skip_enhance: false,
            loss: LossWeights::default(),
            enhance: EnhanceParams::default(),
            eval: EvalConfig::default(),
            fixture: FixtureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Scene bounds are the cube `[-half_extent, half_extent]³`.
    pub half_extent: f64,
    /// Coarse (dense stage) resolution; the preset's when unset.
    pub coarse: Option<usize>,
    /// Ratio of sparse to coarse resolution; the preset's when unset.
    pub sparse_factor: Option<usize>,
    /// Resolution of ground-truth SDF volumes written by `fixtures` and
    /// `sdf`.
    pub sdf: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_extent: 0.5, coarse: None, sparse_factor: None, sdf: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OccupancyConfig {
    /// A coarse voxel is occupied when sigmoid(logit) exceeds this.
    pub threshold: f64,
    /// Take coarse occupancy from the ground-truth SDF instead of the dense
    /// network.
    pub from_gt_sdf: bool,
    /// Band half-width in coarse voxels used with `from_gt_sdf`.
    pub band_voxels: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self { threshold: 0.5, from_gt_sdf: false, band_voxels: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub points: usize,
    pub threshold: f64,
    pub psnr_cap: f64,
    /// Views of the evaluation ring used for PSNR.
    pub views: usize,
    pub image_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { points: DEFAULT_POINTS, threshold: DEFAULT_THRESHOLD, psnr_cap: DEFAULT_PSNR_CAP, views: 4, image_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub shape: String,
    pub views: usize,
    pub image_size: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self { shape: "sphere".into(), views: 6, image_size: 64 }
    }
}

fn rescale(levels: &mut [LevelConfig], first: usize) -> Result<()> {
    let old = levels[0].resolution;
    for l in levels.iter_mut() {
        let r = l.resolution * first;
        if r % old != 0 {
            return Err(Error::Config(format!("resolution {first} does not keep the level structure of base resolution {old}")));
        }
        l.resolution = r / old;
    }
    Ok(())
}

impl PipelineConfig {
    /// TOML unless the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let json = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        };
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Hash of the canonical JSON form, recorded in provenance files.
    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("configuration serializes").as_bytes())
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::centered_cube(self.grid.half_extent)
    }

    /// The preset with any resolution overrides applied, validated.
    pub fn arch_config(&self) -> Result<ArchConfig> {
        let mut arch = ArchConfig::preset(&self.arch).map_err(|e| Error::Config(e.to_string()))?;
        let coarse = self.grid.coarse.unwrap_or(arch.voxelformer.levels[0].resolution);
        let factor = self.grid.sparse_factor.unwrap_or(arch.sparse_factor());
        if coarse == 0 || factor < 2 {
            return Err(Error::Config(format!("coarse resolution must be positive and sparse factor at least 2 (got {coarse}, {factor})")));
        }
        rescale(&mut arch.voxelformer.levels, coarse)?;
        rescale(&mut arch.sparse_voxelformer.levels, coarse * factor)?;
        arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch_config()?;
        if !(self.grid.half_extent > 0.0 && self.grid.half_extent.is_finite()) {
            return Err(Error::Config("grid.half_extent must be positive".into()));
        }
        if self.grid.sdf < 2 {
            return Err(Error::Config("grid.sdf must be at least 2".into()));
        }
        if !(self.occupancy.threshold > 0.0 && self.occupancy.threshold < 1.0) {
            return Err(Error::Config("occupancy.threshold must lie in (0, 1)".into()));
        }
        if !(self.occupancy.band_voxels > 0.0 && self.occupancy.band_voxels.is_finite()) {
            return Err(Error::Config("occupancy.band_voxels must be positive".into()));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.enhance.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.eval.points == 0 || !(self.eval.threshold > 0.0) || self.eval.image_size == 0 {
            return Err(Error::Config("eval.points, eval.threshold and eval.image_size must be positive".into()));
        }
        Ok(())
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams { points: self.eval.points, threshold: self.eval.threshold, seed: self.seed, psnr_cap: self.eval.psnr_cap, ..EvalParams::default() }
    }
}
