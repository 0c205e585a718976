//! Surface rasterizer, image losses and the six-term training loss.
//!
//! Barycentric weights are computed from ray/edge triple products in the
//! camera frame, which makes them perspective-correct and gives closed-form
//! derivatives with respect to vertex positions. Gradients cover covered
//! (interior) pixels only; coverage changes at silhouettes are not
//! differentiated.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{normals_to_camera, normals_to_world, Camera, Image, View};
use crate::math::{ceil, floor, Vec3};
use crate::mesh::TriMesh;
use crate::volume::DenseVolume;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("mesh has no {0} texture")]
    MissingTexture(&'static str),
    #[error("image shapes differ")]
    ShapeMismatch,
    #[error("volume grids differ between prediction and reference")]
    VolumeMismatch,
    #[error("loss weights must be finite and non-negative")]
    InvalidWeights,
    #[error("{0} rendered views for {1} references")]
    ViewCount(usize, usize),
}

pub const BACKGROUND: u32 = u32::MAX;

/// Rendered images plus the per-pixel face and barycentric weights needed
/// for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub camera: Camera,
    pub rgb: Image,
    pub normal: Image,
    pub mask: Vec<bool>,
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
}

impl RenderTarget {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn covered(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

fn pixel_ray(camera: &Camera, x: usize, y: usize) -> Vec3 {
    Vec3::new((x as f64 - camera.cx) / camera.fx, (y as f64 - camera.cy) / camera.fy, 1.0)
}

/// Unnormalized barycentric triple products for the ray `d` from the eye.
fn triple(d: &Vec3, p: &[Vec3; 3]) -> [f64; 3] {
    [d.dot(&p[1].cross(&p[2])), d.dot(&p[2].cross(&p[0])), d.dot(&p[0].cross(&p[1]))]
}

/// Renders color and normal textures with a z-buffer. The normal image is
/// the interpolated normal texture, renormalized, in world coordinates.
pub fn rasterize(mesh: &TriMesh, camera: &Camera) -> Result<RenderTarget, RenderError> {
    let colors = mesh.colors.as_ref().ok_or(RenderError::MissingTexture("color"))?;
    let normals = mesh.normals.as_ref().ok_or(RenderError::MissingTexture("normal"))?;
    let (w, h) = (camera.width, camera.height);
    let n = w * h;
    let mut depth = alloc::vec![f64::INFINITY; n];
    let mut face = alloc::vec![BACKGROUND; n];
    let mut bary = alloc::vec![[0.0; 3]; n];
    let cam_vertices: Vec<Vec3> = mesh.vertices.iter().map(|v| camera.world_to_camera(v)).collect();

    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = f.map(|i| cam_vertices[i as usize]);
        if p.iter().any(|q| q.z <= 1e-9) {
            continue;
        }
        let uv = p.map(|q| (camera.fx * q.x / q.z + camera.cx, camera.fy * q.y / q.z + camera.cy));
        let umin = uv.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        let umax = uv.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let vmin = uv.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let vmax = uv.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        if umax < 0.0 || vmax < 0.0 || umin > (w - 1) as f64 || vmin > (h - 1) as f64 {
            continue;
        }
        let x0 = ceil(umin).max(0.0) as usize;
        let x1 = floor(umax).min((w - 1) as f64) as usize;
        let y0 = ceil(vmin).max(0.0) as usize;
        let y1 = floor(vmax).min((h - 1) as f64) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = pixel_ray(camera, x, y);
                let t = triple(&d, &p);
                let s = t[0] + t[1] + t[2];
                if s == 0.0 {
                    continue;
                }
                let b = t.map(|v| v / s);
                if b.iter().any(|v| *v < 0.0) {
                    continue;
                }
                let z = b[0] * p[0].z + b[1] * p[1].z + b[2] * p[2].z;
                let idx = y * w + x;
                if z > 0.0 && z < depth[idx] {
                    depth[idx] = z;
                    face[idx] = fi as u32;
                    bary[idx] = b;
                }
            }
        }
    }

    let mut rgb = Image::new(w, h, 3);
    let mut normal = Image::new(w, h, 3);
    let mut mask = alloc::vec![false; n];
    for idx in 0..n {
        if face[idx] == BACKGROUND {
            depth[idx] = 0.0;
            continue;
        }
        mask[idx] = true;
        let f = mesh.faces[face[idx] as usize];
        let b = bary[idx];
        let mut c = Vec3::zeros();
        let mut m = Vec3::zeros();
        for k in 0..3 {
            c += colors[f[k] as usize] * b[k];
            m += normals[f[k] as usize] * b[k];
        }
        let (x, y) = (idx % w, idx / w);
        rgb.set_vec3(x, y, &c);
        let norm = m.norm();
        if norm > 0.0 {
            normal.set_vec3(x, y, &(m / norm));
        }
    }
    Ok(RenderTarget { camera: camera.clone(), rgb, normal, mask, depth, face, bary })
}

impl RenderTarget {
    /// Input view from this render: normals converted to the camera frame,
    /// background pixels left black.
    pub fn to_view(&self) -> View {
        View { camera: self.camera.clone(), rgb: self.rgb.clone(), normal: normals_to_camera(&self.normal, &self.camera), mask: self.mask.clone() }
    }
}

/// Renders one input view per camera.
pub fn render_views(mesh: &TriMesh, cameras: &[Camera]) -> Result<Vec<View>, RenderError> {
    cameras.iter().map(|c| Ok(rasterize(mesh, c)?.to_view())).collect()
}

/// Gradients of a scalar loss with respect to mesh attributes and vertex
/// positions (world frame).
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGrad {
    pub colors: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub positions: Vec<Vec3>,
}

impl MeshGrad {
    pub fn zeros(n: usize) -> Self {
        Self { colors: alloc::vec![Vec3::zeros(); n], normals: alloc::vec![Vec3::zeros(); n], positions: alloc::vec![Vec3::zeros(); n] }
    }
}

/// Derivatives of the three normalized barycentric weights with respect
/// to the three camera-frame vertex positions: `out[i][j] = dw_i/dp_j`.
fn bary_position_jacobian(d: &Vec3, p: &[Vec3; 3]) -> [[Vec3; 3]; 3] {
    let t = triple(d, p);
    let s = t[0] + t[1] + t[2];
    // dt_i/dp_j: t_i = d.(p_{i+1} x p_{i+2}) depends on the other two.
    let mut dt = [[Vec3::zeros(); 3]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        dt[i][j] = p[k].cross(d);
        dt[i][k] = d.cross(&p[j]);
    }
    let mut out = [[Vec3::zeros(); 3]; 3];
    for j in 0..3 {
        let ds = dt[0][j] + dt[1][j] + dt[2][j];
        for i in 0..3 {
            out[i][j] = (dt[i][j] * s - ds * t[i]) / (s * s);
        }
    }
    out
}

/// Accumulates `dL/d(attributes, positions)` from per-pixel gradients of
/// the rgb and normal images. Either image gradient may be omitted.
pub fn backward(mesh: &TriMesh, target: &RenderTarget, grad_rgb: Option<&Image>, grad_normal: Option<&Image>) -> Result<MeshGrad, RenderError> {
    let colors = mesh.colors.as_ref().ok_or(RenderError::MissingTexture("color"))?;
    let normals = mesh.normals.as_ref().ok_or(RenderError::MissingTexture("normal"))?;
    for g in [grad_rgb, grad_normal].into_iter().flatten() {
        if !g.same_shape(&target.rgb) {
            return Err(RenderError::ShapeMismatch);
        }
    }
    let camera = &target.camera;
    let rot = camera.rotation();
    let w = target.width();
    let mut out = MeshGrad::zeros(mesh.vertices.len());
    for (idx, &fi) in target.face.iter().enumerate() {
        if fi == BACKGROUND {
            continue;
        }
        let (x, y) = (idx % w, idx / w);
        let f = mesh.faces[fi as usize];
        let b = target.bary[idx];
        // dL/dw_i collected from both images.
        let mut dl_dw = [0.0; 3];
        if let Some(g) = grad_rgb {
            let gc = g.vec3(x, y);
            for k in 0..3 {
                out.colors[f[k] as usize] += gc * b[k];
                dl_dw[k] += gc.dot(&colors[f[k] as usize]);
            }
        }
        if let Some(g) = grad_normal {
            let gn = g.vec3(x, y);
            let mut m = Vec3::zeros();
            for k in 0..3 {
                m += normals[f[k] as usize] * b[k];
            }
            let norm = m.norm();
            if norm > 0.0 {
                let n = m / norm;
                let gm = (gn - n * n.dot(&gn)) / norm;
                for k in 0..3 {
                    out.normals[f[k] as usize] += gm * b[k];
                    dl_dw[k] += gm.dot(&normals[f[k] as usize]);
                }
            }
        }
        let p = f.map(|i| camera.world_to_camera(&mesh.vertices[i as usize]));
        let jac = bary_position_jacobian(&pixel_ray(camera, x, y), &p);
        for j in 0..3 {
            let mut g_cam = Vec3::zeros();
            for i in 0..3 {
                g_cam += jac[i][j] * dl_dw[i];
            }
            out.positions[f[j] as usize] += rot * g_cam;
        }
    }
    Ok(out)
}

/// Masked mean squared error and its gradient with respect to `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseResult {
    pub value: f64,
    pub grad: Image,
    /// No pixel was selected; `value` is 0 by definition.
    pub empty_mask: bool,
}

/// Mean over selected pixels and channels. `mask = None` selects every
/// pixel.
pub fn image_mse(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<MseResult, RenderError> {
    if !a.same_shape(b) || mask.is_some_and(|m| m.len() != a.pixel_count()) {
        return Err(RenderError::ShapeMismatch);
    }
    let c = a.channels;
    let selected = |p: usize| mask.is_none_or(|m| m[p]);
    let count = (0..a.pixel_count()).filter(|p| selected(*p)).count() * c;
    let mut grad = Image::new(a.width, a.height, c);
    if count == 0 {
        return Ok(MseResult { value: 0.0, grad, empty_mask: true });
    }
    let mut sum = 0.0;
    for p in 0..a.pixel_count() {
        if !selected(p) {
            continue;
        }
        for k in 0..c {
            let d = a.data[p * c + k] - b.data[p * c + k];
            sum += d * d;
            grad.data[p * c + k] = 2.0 * d / count as f64;
        }
    }
    Ok(MseResult { value: sum / count as f64, grad, empty_mask: false })
}

pub fn union_mask(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x || *y).collect()
}

pub const PYRAMID_LEVELS: usize = 3;

fn downsample(img: &Image) -> Image {
    let (w, h) = (img.width / 2, img.height / 2);
    Image::from_fn(w, h, img.channels, |x, y, k| {
        (img.pixel(2 * x, 2 * y)[k] + img.pixel(2 * x + 1, 2 * y)[k] + img.pixel(2 * x, 2 * y + 1)[k] + img.pixel(2 * x + 1, 2 * y + 1)[k]) * 0.25
    })
}

/// Multi-scale image-difference stand-in for a learned perceptual metric.
///
/// For each level of a 2×2 average pyramid (up to [`PYRAMID_LEVELS`],
/// stopping before a level would vanish) the mean absolute difference of
/// forward-difference gradient components is taken; the mean absolute
/// intensity difference at the coarsest level is added once.
pub fn perceptual_substitute(a: &Image, b: &Image) -> Result<f64, RenderError> {
    if !a.same_shape(b) {
        return Err(RenderError::ShapeMismatch);
    }
    if a.pixel_count() == 0 {
        return Ok(0.0);
    }
    let mut la = a.clone();
    let mut lb = b.clone();
    let mut total = 0.0;
    for level in 0..PYRAMID_LEVELS {
        let (w, h, c) = (la.width, la.height, la.channels);
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    let d = la.pixel(x, y)[k] - lb.pixel(x, y)[k];
                    if x + 1 < w {
                        sum += (la.pixel(x + 1, y)[k] - lb.pixel(x + 1, y)[k] - d).abs();
                        count += 1;
                    }
                    if y + 1 < h {
                        sum += (la.pixel(x, y + 1)[k] - lb.pixel(x, y + 1)[k] - d).abs();
                        count += 1;
                    }
                }
            }
        }
        if count > 0 {
            total += sum / count as f64;
        }
        if level + 1 == PYRAMID_LEVELS || w < 2 || h < 2 {
            break;
        }
        la = downsample(&la);
        lb = downsample(&lb);
    }
    let l1: f64 = la.data.iter().zip(&lb.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / la.data.len() as f64;
    Ok(total + l1)
}

/// Weights of the six loss terms, in breakdown order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mse_color: f64,
    pub lpips_color: f64,
    pub mse_normal: f64,
    pub lpips_normal: f64,
    pub occ: f64,
    pub sdf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse_color: 80.0, lpips_color: 2.0, mse_normal: 16.0, lpips_normal: 2.0, occ: 8.0, sdf: 8.0 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.mse_color, self.lpips_color, self.mse_normal, self.lpips_normal, self.occ, self.sdf]
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        Self { mse_color: w[0], lpips_color: w[1], mse_normal: w[2], lpips_normal: w[3], occ: w[4], sdf: w[5] }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(RenderError::InvalidWeights)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_color: f64,
    pub lpips_color: f64,
    pub mse_normal: f64,
    pub lpips_normal: f64,
    pub occ: f64,
    pub sdf: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 6] {
        [self.mse_color, self.lpips_color, self.mse_normal, self.lpips_normal, self.occ, self.sdf]
    }
}

/// Mean squared difference of two volumes on the same grid.
pub fn volume_mse(pred: &DenseVolume, gt: &DenseVolume) -> Result<f64, RenderError> {
    if pred.spec != gt.spec || pred.channels != gt.channels {
        return Err(RenderError::VolumeMismatch);
    }
    if pred.values.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.values.iter().zip(&gt.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.values.len() as f64)
}

/// The weighted six-term loss. Image terms are averaged over views; MSE
/// terms use the union of rendered and reference masks, and reference
/// normals are rotated to world frame before comparison.
pub fn total_loss(
    rendered: &[RenderTarget],
    references: &[View],
    pred_occ: &DenseVolume,
    gt_occ: &DenseVolume,
    pred_sdf: &DenseVolume,
    gt_sdf: &DenseVolume,
    weights: &LossWeights,
) -> Result<LossBreakdown, RenderError> {
    weights.validate()?;
    if rendered.len() != references.len() {
        return Err(RenderError::ViewCount(rendered.len(), references.len()));
    }
    let mut b = LossBreakdown::default();
    for (r, v) in rendered.iter().zip(references) {
        let mask = union_mask(&r.mask, &v.mask);
        let ref_normal = normals_to_world(&v.normal, &v.camera);
        b.mse_color += image_mse(&r.rgb, &v.rgb, Some(&mask))?.value;
        b.lpips_color += perceptual_substitute(&r.rgb, &v.rgb)?;
        b.mse_normal += image_mse(&r.normal, &ref_normal, Some(&mask))?.value;
        b.lpips_normal += perceptual_substitute(&r.normal, &ref_normal)?;
    }
    if !rendered.is_empty() {
        let n = rendered.len() as f64;
        b.mse_color /= n;
        b.lpips_color /= n;
        b.mse_normal /= n;
        b.lpips_normal /= n;
    }
    b.occ = volume_mse(pred_occ, gt_occ)?;
    b.sdf = volume_mse(pred_sdf, gt_sdf)?;
    b.total = weights.as_array().iter().zip(b.terms()).map(|(w, t)| w * t).sum();
    Ok(b)
}
