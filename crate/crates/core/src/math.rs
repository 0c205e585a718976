//! Scalar helpers shared by every module.
//!
//! `core` has no transcendental functions on `f64`, so these forward to
//! `libm`. Results are identical with or without `std`.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub use libm::{acos, atan2, cbrt, ceil, cos, exp, floor, log, log10, pow, round, sin, sqrt, tanh};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Angle between two vectors in degrees, with the cosine clamped to [-1, 1].
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 180.0;
    }
    let c = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    acos(c).to_degrees()
}

/// Unit vector along `v`, or `None` when `v` is zero.
pub fn try_normalize(v: &Vec3) -> Option<Vec3> {
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        Some(v / n)
    } else {
        None
    }
}

/// Rotation of `angle` radians about the unit axis `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let k = axis.normalize();
    let (s, c) = (sin(angle), cos(angle));
    let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Mat3::identity() + kx * s + kx * kx * (1.0 - c)
}

/// 64-bit FNV-1a, used for stable fingerprints and per-layer seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
