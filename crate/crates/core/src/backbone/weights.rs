use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ArchConfig, UNetConfig};
use super::{BackboneError, SPARSE_VOXELFORMER, VOXELFORMER};
use crate::math::{fnv1a, sqrt};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn numel(shape: &[usize]) -> usize {
        shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

struct Layout(Vec<(String, Vec<usize>, Init)>);

impl Layout {
    fn push(&mut self, path: String, shape: Vec<usize>, init: Init) {
        self.0.push((path, shape, init));
    }

    fn linear(&mut self, path: &str, out: usize, inp: usize) {
        let b = 1.0 / sqrt(inp as f64);
        self.push(format!("{path}.weight"), vec![out, inp], Init::Uniform(b));
        self.push(format!("{path}.bias"), vec![out], Init::Uniform(b));
    }

    fn conv(&mut self, path: &str, out: usize, inp: usize, taps: usize) {
        let b = 1.0 / sqrt((inp * taps) as f64);
        self.push(format!("{path}.weight"), vec![out, inp, taps], Init::Uniform(b));
        self.push(format!("{path}.bias"), vec![out], Init::Uniform(b));
    }

    fn norm(&mut self, path: &str, width: usize) {
        self.push(format!("{path}.gain"), vec![width], Init::Ones);
        self.push(format!("{path}.bias"), vec![width], Init::Zeros);
    }

    fn res_block(&mut self, path: &str, c: usize) {
        self.conv(&format!("{path}.conv1"), c, c, 27);
        self.conv(&format!("{path}.conv2"), c, c, 27);
    }

    fn unet(&mut self, p: &str, cfg: &UNetConfig, pixel_width: usize) {
        let levels = &cfg.levels;
        self.push(format!("{p}.input_token"), vec![levels[0].channels], Init::Uniform(1.0));
        for (l, lv) in levels.iter().enumerate() {
            let c = lv.channels;
            self.res_block(&format!("{p}.level{l}.res"), c);
            let a = format!("{p}.level{l}.xattn");
            self.linear(&format!("{a}.q"), c, c);
            self.linear(&format!("{a}.k_vox"), c, c);
            self.linear(&format!("{a}.v_vox"), c, c);
            self.linear(&format!("{a}.k_pix"), c, pixel_width);
            self.linear(&format!("{a}.v_pix"), c, pixel_width);
            self.linear(&format!("{a}.out"), c, c);
            if l + 1 < levels.len() {
                self.linear(&format!("{p}.down{l}"), levels[l + 1].channels, c);
            }
        }
        let t = &cfg.transformer;
        let cb = cfg.bottleneck_channels();
        if t.width != cb {
            self.linear(&format!("{p}.bottleneck.in"), t.width, cb);
            self.linear(&format!("{p}.bottleneck.out"), cb, t.width);
        }
        for i in 0..t.layers {
            let b = format!("{p}.bottleneck.layer{i}");
            self.norm(&format!("{b}.ln1"), t.width);
            for m in ["q", "k", "v", "o"] {
                self.linear(&format!("{b}.attn.{m}"), t.width, t.width);
            }
            self.norm(&format!("{b}.ln2"), t.width);
            self.linear(&format!("{b}.mlp.fc1"), t.width * t.mlp_ratio, t.width);
            self.linear(&format!("{b}.mlp.fc2"), t.width, t.width * t.mlp_ratio);
        }
        for l in (0..levels.len().saturating_sub(1)).rev() {
            let c = levels[l].channels;
            self.linear(&format!("{p}.up{l}.proj"), c, levels[l + 1].channels);
            self.linear(&format!("{p}.up{l}.fuse"), c, 2 * c);
            self.res_block(&format!("{p}.up{l}.res"), c);
        }
        self.linear(&format!("{p}.head"), cfg.out_channels, levels[0].channels);
    }

    fn arch(cfg: &ArchConfig) -> Self {
        let mut out = Layout(Vec::new());
        let e = cfg.encoder;
        for s in ["rgb", "normal"] {
            out.conv(&format!("encoder.{s}.patch"), e.channels, 3, e.stride * e.stride);
            out.conv(&format!("encoder.{s}.conv"), e.channels, e.channels, 9);
        }
        out.unet(VOXELFORMER, &cfg.voxelformer, cfg.pixel_width());
        out.unet(SPARSE_VOXELFORMER, &cfg.sparse_voxelformer, cfg.pixel_width());
        let f = cfg.sparse_voxelformer.out_channels;
        for (name, width) in [("sdf", 1), ("color", 3), ("normal", 3)] {
            out.linear(&format!("heads.{name}.l0"), cfg.heads.hidden, f);
            out.linear(&format!("heads.{name}.l1"), width, cfg.heads.hidden);
        }
        out
    }
}

/// Every parameter tensor of the architecture with its shape, in a fixed
/// order. Does not allocate parameter data.
pub fn layer_shapes(cfg: &ArchConfig) -> Vec<(String, Vec<usize>)> {
    Layout::arch(cfg).0.into_iter().map(|(p, s, _)| (p, s)).collect()
}

/// Hash of the preset name and every parameter path and shape.
pub fn config_hash(cfg: &ArchConfig) -> u64 {
    let mut text = String::new();
    text.push_str(&cfg.name);
    for (p, s) in layer_shapes(cfg) {
        text.push_str(&format!(";{p}:{s:?}"));
    }
    fnv1a(text.as_bytes())
}

/// Named parameter tensors. Values are stored as f64 but are always
/// representable in f32, so the binary format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub config_hash: u64,
    tensors: BTreeMap<String, Tensor>,
}

fn layer_seed(seed: u64, path: &str) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ fnv1a(path.as_bytes())
}

impl WeightStore {
    /// Deterministic initialization; each tensor draws from its own stream
    /// keyed by the seed and its path.
    pub fn seeded(cfg: &ArchConfig, seed: u64) -> Result<Self, BackboneError> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (path, shape, init) in Layout::arch(cfg).0 {
            let n = Tensor::numel(&shape);
            let data = match init {
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
                Init::Uniform(b) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(seed, &path));
                    (0..n).map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * b) as f32 as f64).collect()
                }
            };
            tensors.insert(path, Tensor { shape, data });
        }
        Ok(Self { config_hash: config_hash(cfg), tensors })
    }

    pub fn from_tensors(config_hash: u64, tensors: BTreeMap<String, Tensor>) -> Self {
        Self { config_hash, tensors }
    }

    pub fn get(&self, path: &str) -> Result<&Tensor, BackboneError> {
        self.tensors.get(path).ok_or_else(|| BackboneError::MissingWeight(String::from(path)))
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Exactly one tensor of the right shape per layer of `cfg`.
    pub fn validate(&self, cfg: &ArchConfig) -> Result<(), BackboneError> {
        let expected = config_hash(cfg);
        if self.config_hash != expected {
            return Err(BackboneError::ConfigHash { expected, got: self.config_hash });
        }
        let shapes = layer_shapes(cfg);
        for (path, shape) in &shapes {
            let t = self.get(path)?;
            if &t.shape != shape || t.data.len() != Tensor::numel(shape) {
                return Err(BackboneError::WeightShape { path: path.clone(), expected: shape.clone(), got: t.shape.clone() });
            }
        }
        if self.tensors.len() != shapes.len() {
            let known: BTreeMap<&str, ()> = shapes.iter().map(|(p, _)| (p.as_str(), ())).collect();
            if let Some(extra) = self.tensors.keys().find(|k| !known.contains_key(k.as_str())) {
                return Err(BackboneError::UnexpectedWeight(extra.clone()));
            }
        }
        Ok(())
    }
}
