use alloc::format;
use alloc::vec::Vec;

pub use super::nn::softmax_attention;
use super::encoder::ViewFeatures;
use super::nn::Linear;
use super::weights::WeightStore;
use super::BackboneError;
use crate::camera::{normals_to_world, sample_image, Camera, Image, ViewSet};
use crate::math::{sqrt, Vec3};

/// One view ready for projection lookups: camera, encoded features and the
/// raw RGB and world-frame normal images.
#[derive(Debug, Clone)]
pub struct PreparedView<'a> {
    pub camera: &'a Camera,
    pub features: &'a ViewFeatures,
    pub rgb: &'a Image,
    pub normal_world: Image,
}

pub fn prepare_views<'a>(views: &'a ViewSet, features: &'a [ViewFeatures]) -> Result<Vec<PreparedView<'a>>, BackboneError> {
    if views.is_empty() {
        return Err(BackboneError::NoViews);
    }
    if features.len() != views.len() {
        return Err(BackboneError::Width { what: "view features", expected: views.len(), got: features.len() });
    }
    Ok(views
        .views
        .iter()
        .zip(features)
        .map(|(v, f)| PreparedView { camera: &v.camera, features: f, rgb: &v.rgb, normal_world: normals_to_world(&v.normal, &v.camera) })
        .collect())
}

/// Token of the pixel that `p` projects to: `[rgb features, normal
/// features, rgb, world normal]`. `None` when the point is behind the
/// camera or projects outside the image.
pub fn pixel_token(view: &PreparedView, p: &Vec3) -> Option<Vec<f64>> {
    let proj = view.camera.project(p);
    if !proj.valid {
        return None;
    }
    let color = sample_image(view.rgb, proj.u, proj.v);
    if !color.in_view {
        return None;
    }
    let s = view.features.stride as f64;
    let (fu, fv) = ((proj.u + 0.5) / s - 0.5, (proj.v + 0.5) / s - 0.5);
    let mut token = sample_image(&view.features.rgb, fu, fv).value;
    token.extend(sample_image(&view.features.normal, fu, fv).value);
    token.extend(color.value);
    let n = sample_image(&view.normal_world, proj.u, proj.v).value;
    let len = sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if len > 1e-9 {
        token.extend(n.iter().map(|c| c / len));
    } else {
        token.extend([0.0; 3]);
    }
    Some(token)
}

/// Loaded projection weights of one cross-attention layer.
pub(crate) struct CrossAttention<'a> {
    q: Linear<'a>,
    k_vox: Linear<'a>,
    v_vox: Linear<'a>,
    k_pix: Linear<'a>,
    v_pix: Linear<'a>,
    out: Linear<'a>,
    heads: usize,
}

impl<'a> CrossAttention<'a> {
    pub fn load(ws: &'a WeightStore, prefix: &str, channels: usize, pixel_width: usize, heads: usize) -> Result<Self, BackboneError> {
        let lin = |name: &str, inp: usize| -> Result<Linear<'a>, BackboneError> {
            let l = Linear::load(ws, &format!("{prefix}.{name}"), inp)?;
            if l.out != channels {
                return Err(BackboneError::Width { what: "attention projection", expected: channels, got: l.out });
            }
            Ok(l)
        };
        Ok(Self {
            q: lin("q", channels)?,
            k_vox: lin("k_vox", channels)?,
            v_vox: lin("v_vox", channels)?,
            k_pix: lin("k_pix", pixel_width)?,
            v_pix: lin("v_pix", pixel_width)?,
            out: lin("out", channels)?,
            heads,
        })
    }

    pub fn apply(&self, x: &[f64], pixels: &[Vec<f64>]) -> Result<Vec<f64>, BackboneError> {
        if x.len() != self.q.inp {
            return Err(BackboneError::Width { what: "voxel feature", expected: self.q.inp, got: x.len() });
        }
        let mut keys = self.k_vox.apply(x);
        let mut values = self.v_vox.apply(x);
        for p in pixels {
            if p.len() != self.k_pix.inp {
                return Err(BackboneError::Width { what: "pixel token", expected: self.k_pix.inp, got: p.len() });
            }
            keys.extend(self.k_pix.apply(p));
            values.extend(self.v_pix.apply(p));
        }
        Ok(self.out.apply(&softmax_attention(&self.q.apply(x), &keys, &values, self.heads)))
    }
}

/// Cross-attention of one voxel feature `x` over its own key/value and
/// those of the `pixels` it projects to. Returns the update to add to `x`.
pub fn cross_attention(
    ws: &WeightStore,
    prefix: &str,
    x: &[f64],
    pixels: &[Vec<f64>],
    pixel_width: usize,
    heads: usize,
) -> Result<Vec<f64>, BackboneError> {
    CrossAttention::load(ws, prefix, x.len(), pixel_width, heads)?.apply(x, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{RingRig, View};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn identical_keys_give_value_mean() {
        for m in [1usize, 3, 6] {
            let c = 4;
            let q = random(c, 1);
            let k: Vec<f64> = (0..m).flat_map(|_| [0.3, -0.2, 0.5, 0.1]).collect();
            let v = random(m * c, m as u64);
            let out = softmax_attention(&q, &k, &v, 2);
            for ch in 0..c {
                let mean = (0..m).map(|j| v[j * c + ch]).sum::<f64>() / m as f64;
                assert!((out[ch] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_direct_softmax() {
        let (c, m, heads) = (6, 5, 3);
        let q = random(c, 2);
        let k = random(m * c, 3);
        let v = random(m * c, 4);
        let out = softmax_attention(&q, &k, &v, heads);
        let d = c / heads;
        for h in 0..heads {
            let logits: Vec<f64> = (0..m)
                .map(|j| (0..d).map(|i| q[h * d + i] * k[j * c + h * d + i]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for i in 0..d {
                let want: f64 = (0..m).map(|j| logits[j].exp() / z * v[j * c + h * d + i]).sum();
                assert!((out[h * d + i] - want).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn output_is_convex_combination(seed in 0u64..1000, m in 1usize..8) {
            let c = 3;
            let q = random(c, seed);
            let k = random(m * c, seed + 1);
            let v = random(m * c, seed + 2);
            let out = softmax_attention(&q, &k, &v, 1);
            for ch in 0..c {
                let lo = (0..m).map(|j| v[j * c + ch]).fold(f64::INFINITY, f64::min);
                let hi = (0..m).map(|j| v[j * c + ch]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[ch] >= lo - 1e-12 && out[ch] <= hi + 1e-12);
            }
        }
    }

    fn toy_view(camera: Camera) -> View {
        let (w, h) = (camera.width, camera.height);
        let rgb = Image::from_fn(w, h, 3, |x, y, c| ((x + y + c) % 7) as f64 / 7.0);
        let normal = Image::from_fn(w, h, 3, |_, _, c| if c == 2 { -1.0 } else { 0.0 });
        View { camera, rgb, normal, mask: alloc::vec![true; w * h] }
    }

    #[test]
    fn pixel_token_layout_and_visibility() {
        let cams = RingRig::fixture(2, 16).cameras().unwrap();
        let views = ViewSet::new(cams.into_iter().map(toy_view).collect()).unwrap();
        let feats: Vec<ViewFeatures> = views
            .views
            .iter()
            .map(|_| ViewFeatures {
                rgb: Image::filled(4, 4, 2, 1.0),
                normal: Image::filled(4, 4, 2, 2.0),
                stride: 4,
            })
            .collect();
        let prepared = prepare_views(&views, &feats).unwrap();
        let t = pixel_token(&prepared[0], &Vec3::zeros()).unwrap();
        assert_eq!(t.len(), 2 * 2 + 6);
        assert_eq!(&t[..4], &[1.0, 1.0, 2.0, 2.0]);
        let n = Vec3::new(t[7], t[8], t[9]);
        assert!((n.norm() - 1.0).abs() < 1e-9);
        let expected = prepared[0].camera.rotation() * Vec3::new(0.0, 0.0, -1.0);
        assert!((n - expected).norm() < 1e-9);
        // Behind the camera.
        let behind = prepared[0].camera.position() * 2.0;
        assert!(pixel_token(&prepared[0], &behind).is_none());
        // Far off to the side.
        assert!(pixel_token(&prepared[0], &Vec3::new(0.0, 0.0, 50.0)).is_none());
    }

    #[test]
    fn cross_attention_without_views_uses_own_value() {
        let cfg = crate::backbone::ArchConfig::toy();
        let ws = WeightStore::seeded(&cfg, 5).unwrap();
        let x = random(8, 9);
        let got = cross_attention(&ws, "voxelformer.level0.xattn", &x, &[], cfg.pixel_width(), 1).unwrap();
        let v = Linear::load(&ws, "voxelformer.level0.xattn.v_vox", 8).unwrap().apply(&x);
        let want = Linear::load(&ws, "voxelformer.level0.xattn.out", 8).unwrap().apply(&v);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
