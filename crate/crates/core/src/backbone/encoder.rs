use alloc::format;
use alloc::vec::Vec;

use super::config::ArchConfig;
use super::nn::{gelu, Conv};
use super::weights::WeightStore;
use super::BackboneError;
use crate::camera::{normals_to_world, Image, ViewSet};

/// Feature maps of one view at `1/stride` of the image size.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub rgb: Image,
    pub normal: Image,
    pub stride: usize,
}

/// Patchify convolution (kernel = stride) with GELU, then a zero-padded
/// 3×3 convolution. `prefix` is `encoder.rgb` or `encoder.normal`.
pub fn encode_image(img: &Image, ws: &WeightStore, prefix: &str, cfg: &ArchConfig) -> Result<Image, BackboneError> {
    let s = cfg.encoder.stride;
    let ce = cfg.encoder.channels;
    if img.width % s != 0 || img.height % s != 0 || img.width == 0 || img.height == 0 {
        return Err(BackboneError::NotDivisible { width: img.width, height: img.height, stride: s });
    }
    if img.channels != 3 {
        return Err(BackboneError::Width { what: "encoder input", expected: 3, got: img.channels });
    }
    let patch = Conv::load(ws, &format!("{prefix}.patch"), ce, 3, s * s)?;
    let conv = Conv::load(ws, &format!("{prefix}.conv"), ce, ce, 9)?;
    let (w, h) = (img.width / s, img.height / s);

    let mut first = Image::new(w, h, ce);
    for y in 0..h {
        for x in 0..w {
            let mut acc = patch.b.to_vec();
            for dy in 0..s {
                for dx in 0..s {
                    patch.accumulate(&mut acc, dy * s + dx, img.pixel(x * s + dx, y * s + dy));
                }
            }
            for (o, a) in first.pixel_mut(x, y).iter_mut().zip(acc) {
                *o = gelu(a);
            }
        }
    }

    let mut out = Image::new(w, h, ce);
    for y in 0..h {
        for x in 0..w {
            let mut acc = conv.b.to_vec();
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let tap = (dx + 1) as usize + 3 * (dy + 1) as usize;
                    conv.accumulate(&mut acc, tap, first.pixel(nx as usize, ny as usize));
                }
            }
            out.pixel_mut(x, y).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Both feature streams for every view. Normals are encoded in the shared
/// world frame.
pub fn encode_views(views: &ViewSet, cfg: &ArchConfig, ws: &WeightStore) -> Result<Vec<ViewFeatures>, BackboneError> {
    views
        .views
        .iter()
        .map(|v| {
            let world = normals_to_world(&v.normal, &v.camera);
            Ok(ViewFeatures {
                rgb: encode_image(&v.rgb, ws, "encoder.rgb", cfg)?,
                normal: encode_image(&world, ws, "encoder.normal", cfg)?,
                stride: cfg.encoder.stride,
            })
        })
        .collect()
}
