use alloc::format;
use alloc::vec::Vec;

use super::nn::Linear;
use super::weights::WeightStore;
use super::BackboneError;
use crate::math::{sigmoid, Vec3};

/// Decoded surface attributes at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub sdf: f64,
    /// In `[0, 1]³`.
    pub color: Vec3,
    /// Unit length, or zero when the raw output vanishes.
    pub normal: Vec3,
}

fn mlp(ws: &WeightStore, name: &str, feature: &[f64]) -> Result<Vec<f64>, BackboneError> {
    let l0 = Linear::load(ws, &format!("heads.{name}.l0"), feature.len())?;
    let l1 = Linear::load(ws, &format!("heads.{name}.l1"), l0.out)?;
    let hidden: Vec<f64> = l0.apply(feature).into_iter().map(|v| v.max(0.0)).collect();
    Ok(l1.apply(&hidden))
}

/// Two-layer ReLU MLPs for SDF, color (sigmoid) and normal (normalized).
pub fn query_heads(ws: &WeightStore, feature: &[f64]) -> Result<HeadOutput, BackboneError> {
    let sdf = mlp(ws, "sdf", feature)?;
    let color = mlp(ws, "color", feature)?;
    let normal = mlp(ws, "normal", feature)?;
    if sdf.len() != 1 || color.len() != 3 || normal.len() != 3 {
        return Err(BackboneError::Width { what: "head output", expected: 7, got: sdf.len() + color.len() + normal.len() });
    }
    let n = Vec3::new(normal[0], normal[1], normal[2]);
    let len = n.norm();
    Ok(HeadOutput {
        sdf: sdf[0],
        color: Vec3::new(sigmoid(color[0]), sigmoid(color[1]), sigmoid(color[2])),
        normal: if len > 1e-12 { n / len } else { Vec3::zeros() },
    })
}
