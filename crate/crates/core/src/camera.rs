//! Pinhole cameras, posed multi-view inputs and image sampling.
//!
//! Conventions: camera +z looks forward, image x grows right and y grows
//! down, and pixel `(i, j)` has its center at continuous coordinate
//! `(u, v) = (i, j)`. World up is +z.

use alloc::vec::Vec;

use nalgebra::Matrix4;
use thiserror::Error;

use crate::math::{cos, floor, sin, Mat3, Vec3};
use crate::mesh::Similarity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("image size must be non-zero")]
    EmptyImage,
    #[error("cam_to_world is not a rigid transform (orthonormality error {0:e})")]
    NotRigid(f64),
    #[error("view set is empty")]
    NoViews,
    #[error("view {view}: image size {got:?} differs from {expected:?}")]
    SizeMismatch { view: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("view {view}: {what} must have {expected} channels, got {got}")]
    ChannelMismatch { view: usize, what: &'static str, expected: usize, got: usize },
    #[error("view {view}: normal at pixel ({x}, {y}) has norm {norm}")]
    NormalNotUnit { view: usize, x: usize, y: usize, norm: f64 },
}

/// Row-major image, `channels` interleaved values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: alloc::vec![value; width * height * channels] }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn vec3(&self, x: usize, y: usize) -> Vec3 {
        let p = self.pixel(x, y);
        Vec3::new(p[0], p[1], p[2])
    }

    pub fn set_vec3(&mut self, x: usize, y: usize, v: &Vec3) {
        self.pixel_mut(x, y).copy_from_slice(v.as_slice());
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Bilinear sample and whether the pixel was inside `[0, w-1] x [0, h-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub value: Vec<f64>,
    pub in_view: bool,
}

/// Bilinear interpolation of the four pixels around `(u, v)`. Out-of-view
/// coordinates are clamped to the border and flagged.
pub fn sample_image(img: &Image, u: f64, v: f64) -> ImageSample {
    let (w, h) = (img.width as f64, img.height as f64);
    let in_view = u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0 && u.is_finite() && v.is_finite();
    let uc = if u.is_finite() { u.clamp(0.0, w - 1.0) } else { 0.0 };
    let vc = if v.is_finite() { v.clamp(0.0, h - 1.0) } else { 0.0 };
    let x0 = (floor(uc) as usize).min(img.width.saturating_sub(2));
    let y0 = (floor(vc) as usize).min(img.height.saturating_sub(2));
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = uc - x0 as f64;
    let fy = vc - y0 as f64;
    let value = (0..img.channels)
        .map(|c| {
            let p00 = img.pixel(x0, y0)[c];
            let p10 = img.pixel(x1, y0)[c];
            let p01 = img.pixel(x0, y1)[c];
            let p11 = img.pixel(x1, y1)[c];
            (1.0 - fy) * ((1.0 - fx) * p00 + fx * p10) + fy * ((1.0 - fx) * p01 + fx * p11)
        })
        .collect();
    ImageSample { value, in_view }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Distance along the camera forward axis.
    pub depth: f64,
    /// False when the point is at or behind the camera plane.
    pub valid: bool,
}

/// Pinhole camera with intrinsics in pixels and a rigid camera-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_to_world: Matrix4<f64>,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, cam_to_world: Matrix4<f64>) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::NonPositiveFocal { fx, fy });
        }
        if width == 0 || height == 0 {
            return Err(CameraError::EmptyImage);
        }
        let r: Mat3 = cam_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        let bottom = (cam_to_world.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).abs().max();
        let err = ortho.max(bottom).max((r.determinant() - 1.0).abs());
        if !(err <= 1e-6) {
            return Err(CameraError::NotRigid(err));
        }
        Ok(Self { fx, fy, cx, cy, width, height, cam_to_world })
    }

    /// Camera at `eye` looking at `target` with a symmetric field of view.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3, fov_y_deg: f64, width: usize, height: usize) -> Result<Self, CameraError> {
        let z = (target - eye).normalize();
        let down = -up;
        let mut y = down - z * down.dot(&z);
        if y.norm() < 1e-9 {
            // Looking along `up`; any perpendicular works.
            y = z.cross(&Vec3::x());
            if y.norm() < 1e-9 {
                y = z.cross(&Vec3::y());
            }
        }
        let y = y.normalize();
        let x = y.cross(&z);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&x);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&y);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&z);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(eye);
        let f = 0.5 * height as f64 / libm::tan(0.5 * fov_y_deg.to_radians());
        Self::new(f, f, (width as f64 - 1.0) * 0.5, (height as f64 - 1.0) * 0.5, width, height, m)
    }

    pub fn rotation(&self) -> Mat3 {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn position(&self) -> Vec3 {
        self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose() * (p - self.position())
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.position()
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let c = self.world_to_camera(p);
        if !(c.z > 0.0) {
            return Projection { u: f64::NAN, v: f64::NAN, depth: c.z, valid: false };
        }
        Projection { u: self.fx * c.x / c.z + self.cx, v: self.fy * c.y / c.z + self.cy, depth: c.z, valid: true }
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.camera_to_world(&(self.ray_camera(u, v) * depth))
    }

    /// Camera-frame direction through pixel `(u, v)` with unit z.
    pub fn ray_camera(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World-frame direction through pixel `(u, v)`, scaled so its forward
    /// component is 1.
    pub fn ray_world(&self, u: f64, v: f64) -> Vec3 {
        self.rotation() * self.ray_camera(u, v)
    }

    /// Pose moved by a rigid motion `m` (scale must be 1).
    pub fn moved(&self, m: &Similarity) -> Self {
        let mut out = self.clone();
        let r = m.rotation * self.rotation();
        let t = m.apply(&self.position());
        out.cam_to_world.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        out.cam_to_world.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        out
    }

    /// Same pose and field of view at another image size.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            cam_to_world: self.cam_to_world,
        }
    }
}

/// Ring of cameras around the origin. Elevations cycle through the list.
#[derive(Debug, Clone, PartialEq)]
pub struct RingRig {
    pub count: usize,
    pub radius: f64,
    pub elevations_deg: Vec<f64>,
    pub azimuth_offset_deg: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl RingRig {
    /// Fixture rig: alternating +20° / -10° elevations at distance 2.
    pub fn fixture(count: usize, size: usize) -> Self {
        Self { count, radius: 2.0, elevations_deg: alloc::vec![20.0, -10.0], azimuth_offset_deg: 30.0, fov_deg: 30.0, width: size, height: size }
    }

    /// Evaluation rig: `count` poses over a full turn at 20° elevation.
    pub fn evaluation(count: usize, size: usize) -> Self {
        Self { count, radius: 2.0, elevations_deg: alloc::vec![20.0], azimuth_offset_deg: 0.0, fov_deg: 30.0, width: size, height: size }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>, CameraError> {
        (0..self.count)
            .map(|i| {
                let az = (self.azimuth_offset_deg + 360.0 * i as f64 / self.count as f64).to_radians();
                let el = self.elevations_deg[i % self.elevations_deg.len().max(1)].to_radians();
                let eye = Vec3::new(cos(el) * cos(az), cos(el) * sin(az), sin(el)) * self.radius;
                Camera::look_at(&eye, &Vec3::zeros(), &Vec3::z(), self.fov_deg, self.width, self.height)
            })
            .collect()
    }
}

/// Rotates each pixel's normal by `rotation`; zero pixels stay zero.
fn rotate_normals(normals: &Image, rotation: &Mat3) -> Image {
    let mut out = normals.clone();
    for y in 0..normals.height {
        for x in 0..normals.width {
            let n = normals.vec3(x, y);
            if n != Vec3::zeros() {
                out.set_vec3(x, y, &(rotation * n));
            }
        }
    }
    out
}

/// Camera-frame normal map to the shared world frame.
pub fn normals_to_world(normals: &Image, camera: &Camera) -> Image {
    rotate_normals(normals, &camera.rotation())
}

pub fn normals_to_camera(normals: &Image, camera: &Camera) -> Image {
    rotate_normals(normals, &camera.rotation().transpose())
}

/// One posed input view. `normal` is in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub rgb: Image,
    pub normal: Image,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<View>,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self, CameraError> {
        let first = views.first().ok_or(CameraError::NoViews)?;
        let size = (first.rgb.width, first.rgb.height);
        for (i, v) in views.iter().enumerate() {
            for (img, what) in [(&v.rgb, "rgb"), (&v.normal, "normal")] {
                if (img.width, img.height) != size {
                    return Err(CameraError::SizeMismatch { view: i, expected: size, got: (img.width, img.height) });
                }
                if img.channels != 3 {
                    return Err(CameraError::ChannelMismatch { view: i, what, expected: 3, got: img.channels });
                }
            }
            if (v.camera.width, v.camera.height) != size {
                return Err(CameraError::SizeMismatch { view: i, expected: size, got: (v.camera.width, v.camera.height) });
            }
            if v.mask.len() != size.0 * size.1 {
                return Err(CameraError::ChannelMismatch { view: i, what: "mask", expected: size.0 * size.1, got: v.mask.len() });
            }
            for y in 0..size.1 {
                for x in 0..size.0 {
                    if v.mask[y * size.0 + x] {
                        let norm = v.normal.vec3(x, y).norm();
                        if (norm - 1.0).abs() > 1e-3 {
                            return Err(CameraError::NormalNotUnit { view: i, x, y, norm });
                        }
                    }
                }
            }
        }
        Ok(Self { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.views[0].rgb.width, self.views[0].rgb.height)
    }
}
