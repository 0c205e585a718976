//! Camera rigs and view directories.
//!
//! `rig.json` is an array of pinhole cameras with a row-major 4×4
//! `cam_to_world`. A view directory holds the rig plus, for view `i`,
//! `view_{i:03}_rgb.png`, `view_{i:03}_mask.png` and the camera-frame normal
//! map as `view_{i:03}_normal.pfm` (or `.png`, which is lossy).

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use voxelmesh_core::{Camera, View, ViewSet};

use super::image::{decode_normals, image_to_mask, load_image, mask_image, save_image};
use super::{create, open};
use crate::error::{Error, IoContext, Result};

pub const RIG_FILE: &str = "rig.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_to_world: [f64; 16],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut m = [0.0; 16];
        for r in 0..4 {
            for k in 0..4 {
                m[r * 4 + k] = c.cam_to_world[(r, k)];
            }
        }
        Self { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height, cam_to_world: m }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> std::result::Result<Camera, voxelmesh_core::camera::CameraError> {
        let m = Matrix4::from_row_slice(&self.cam_to_world);
        Camera::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height, m)
    }
}

pub fn save_rig(path: &Path, cameras: &[Camera]) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    let w = create(path)?;
    serde_json::to_writer_pretty(w, &records).map_err(std::io::Error::from).at(path)
}

pub fn load_rig(path: &Path) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> = serde_json::from_reader(open(path)?).map_err(std::io::Error::from).at(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_camera().map_err(|e| Error::input("rig", format!("{}: camera {i}: {e}", path.display()))))
        .collect()
}

pub fn view_path(dir: &Path, index: usize, what: &str, ext: &str) -> PathBuf {
    dir.join(format!("view_{index:03}_{what}.{ext}"))
}

pub fn save_views(dir: &Path, views: &[View]) -> Result<()> {
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    save_rig(&dir.join(RIG_FILE), &cameras)?;
    for (i, v) in views.iter().enumerate() {
        save_image(&view_path(dir, i, "rgb", "png"), &v.rgb)?;
        save_image(&view_path(dir, i, "normal", "pfm"), &v.normal)?;
        save_image(&view_path(dir, i, "mask", "png"), &mask_image(&v.mask, v.rgb.width, v.rgb.height))?;
    }
    Ok(())
}

/// Loads and validates a view directory.
pub fn load_views(dir: &Path) -> Result<ViewSet> {
    let cameras = load_rig(&dir.join(RIG_FILE))?;
    let mut views = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.into_iter().enumerate() {
        let rgb = load_image(&view_path(dir, i, "rgb", "png"))?;
        let mask = image_to_mask(&load_image(&view_path(dir, i, "mask", "png"))?);
        let pfm = view_path(dir, i, "normal", "pfm");
        let normal = if pfm.exists() {
            load_image(&pfm)?
        } else {
            decode_normals(&load_image(&view_path(dir, i, "normal", "png"))?, &mask)
        };
        if rgb.channels != 3 || normal.channels != 3 {
            return Err(Error::input("views", format!("{}: view {i} images must have 3 channels", dir.display())));
        }
        if mask.len() != rgb.width * rgb.height {
            return Err(Error::input("views", format!("{}: view {i} mask size differs from rgb", dir.display())));
        }
        views.push(View { camera, rgb, normal, mask });
    }
    ViewSet::new(views).map_err(|e| Error::input("views", format!("{}: {e}", dir.display())))
}
