use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::BackboneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub resolution: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    /// Hidden width of the MLP as a multiple of `width`.
    pub mlp_ratio: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// Finest first. Each level keeps or halves the previous resolution.
    pub levels: Vec<LevelConfig>,
    pub transformer: TransformerConfig,
    pub out_channels: usize,
    /// Heads of the per-level cross-attention.
    pub attention_heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub stride: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub name: String,
    pub encoder: EncoderConfig,
    pub voxelformer: UNetConfig,
    pub sparse_voxelformer: UNetConfig,
    pub heads: HeadConfig,
}

fn levels(res: &[usize], ch: &[usize]) -> Vec<LevelConfig> {
    res.iter().zip(ch).map(|(&resolution, &channels)| LevelConfig { resolution, channels }).collect()
}

impl ArchConfig {
    /// Full-size dimensions. Only instantiated for shape audits.
    pub fn paper() -> Self {
        Self {
            name: "paper".to_string(),
            encoder: EncoderConfig { stride: 14, channels: 768 },
            voxelformer: UNetConfig {
                levels: levels(&[64, 32, 16, 16], &[64, 128, 256, 512]),
                transformer: TransformerConfig { layers: 6, width: 512, heads: 8, mlp_ratio: 2 },
                out_channels: 1,
                attention_heads: 1,
            },
            sparse_voxelformer: UNetConfig {
                levels: levels(&[256, 128, 64, 32, 16, 16], &[16, 32, 64, 128, 512, 2048]),
                transformer: TransformerConfig { layers: 16, width: 1024, heads: 16, mlp_ratio: 2 },
                out_channels: 32,
                attention_heads: 1,
            },
            heads: HeadConfig { hidden: 64 },
        }
    }

    pub fn toy() -> Self {
        Self {
            name: "toy".to_string(),
            encoder: EncoderConfig { stride: 4, channels: 8 },
            voxelformer: UNetConfig {
                levels: levels(&[16, 8], &[8, 16]),
                transformer: TransformerConfig { layers: 1, width: 16, heads: 1, mlp_ratio: 2 },
                out_channels: 1,
                attention_heads: 1,
            },
            sparse_voxelformer: UNetConfig {
                levels: levels(&[32, 16, 8], &[4, 8, 16]),
                transformer: TransformerConfig { layers: 1, width: 16, heads: 1, mlp_ratio: 2 },
                out_channels: 8,
                attention_heads: 1,
            },
            heads: HeadConfig { hidden: 16 },
        }
    }

    pub fn preset(name: &str) -> Result<Self, BackboneError> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(BackboneError::UnknownPreset(other.to_string())),
        }
    }

    /// Width of a projected pixel token: both feature streams plus RGB and
    /// normal values.
    pub fn pixel_width(&self) -> usize {
        2 * self.encoder.channels + 6
    }

    /// Resolution ratio between the sparse and dense stages.
    pub fn sparse_factor(&self) -> usize {
        self.sparse_voxelformer.levels[0].resolution / self.voxelformer.levels[0].resolution
    }

    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.encoder.stride == 0 || self.encoder.channels == 0 {
            return Err(BackboneError::InvalidConfig("encoder stride and channels must be positive".to_string()));
        }
        if self.heads.hidden == 0 {
            return Err(BackboneError::InvalidConfig("head width must be positive".to_string()));
        }
        self.voxelformer.validate("voxelformer")?;
        self.sparse_voxelformer.validate("sparse_voxelformer")?;
        let (d, s) = (self.voxelformer.levels[0].resolution, self.sparse_voxelformer.levels[0].resolution);
        if s % d != 0 || s / d < 2 {
            return Err(BackboneError::InvalidConfig(format!("sparse resolution {s} must be a multiple (at least 2x) of dense resolution {d}")));
        }
        Ok(())
    }
}

impl UNetConfig {
    pub fn validate(&self, name: &str) -> Result<(), BackboneError> {
        let bad = |m: String| Err(BackboneError::InvalidConfig(format!("{name}: {m}")));
        if self.levels.is_empty() {
            return bad("needs at least one level".to_string());
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.channels == 0 || l.resolution == 0 {
                return bad(format!("level {i} has zero size"));
            }
            if l.channels % self.attention_heads.max(1) != 0 {
                return bad(format!("level {i} channels not divisible by attention heads"));
            }
            if i > 0 {
                let prev = self.levels[i - 1].resolution;
                if !(l.resolution == prev || (prev % 2 == 0 && l.resolution * 2 == prev)) {
                    return bad(format!("level {i} resolution {} must equal or halve {prev}", l.resolution));
                }
            }
        }
        let t = &self.transformer;
        if t.width == 0 || t.heads == 0 || t.width % t.heads != 0 || t.mlp_ratio == 0 {
            return bad("transformer width must be a positive multiple of its heads".to_string());
        }
        if self.out_channels == 0 || self.attention_heads == 0 {
            return bad("output width and attention heads must be positive".to_string());
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.levels.last().map(|l| l.channels).unwrap_or(0)
    }
}
