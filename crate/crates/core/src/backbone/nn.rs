use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::exec::Executor;
use super::weights::{Tensor, WeightStore};
use super::BackboneError;
use crate::math::{cos, exp, sin, sqrt, tanh};

pub fn silu(x: f64) -> f64 {
    x / (1.0 + exp(-x))
}

/// Tanh approximation.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + tanh(K * (x + 0.044715 * x * x * x)))
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / sqrt(var + 1e-5);
    x.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
}

pub(crate) fn expect_shape(path: &str, t: &Tensor, shape: &[usize]) -> Result<(), BackboneError> {
    if t.shape != shape {
        return Err(BackboneError::WeightShape { path: path.into(), expected: shape.to_vec(), got: t.shape.clone() });
    }
    Ok(())
}

/// `path.weight` `[out, in]` and `path.bias` `[out]`.
pub(crate) struct Linear<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub out: usize,
    pub inp: usize,
}

impl<'a> Linear<'a> {
    pub fn load(ws: &'a WeightStore, path: &str, inp: usize) -> Result<Self, BackboneError> {
        let wp = format!("{path}.weight");
        let w = ws.get(&wp)?;
        if w.shape.len() != 2 || w.shape[1] != inp {
            return Err(BackboneError::WeightShape { path: wp, expected: vec![w.shape.first().copied().unwrap_or(0), inp], got: w.shape.clone() });
        }
        let out = w.shape[0];
        let bp = format!("{path}.bias");
        let b = ws.get(&bp)?;
        expect_shape(&bp, b, &[out])?;
        Ok(Self { w: &w.data, b: &b.data, out, inp })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        (0..self.out)
            .map(|o| self.b[o] + self.w[o * self.inp..(o + 1) * self.inp].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Row-wise over `n` rows of width `inp`.
    pub fn apply_rows(&self, x: &[f64]) -> Vec<f64> {
        x.chunks_exact(self.inp).flat_map(|r| self.apply(r)).collect()
    }
}

/// Convolution weights `[out, in, taps]` with bias `[out]`.
pub(crate) struct Conv<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub out: usize,
    pub inp: usize,
    pub taps: usize,
}

impl<'a> Conv<'a> {
    pub fn load(ws: &'a WeightStore, path: &str, out: usize, inp: usize, taps: usize) -> Result<Self, BackboneError> {
        let wp = format!("{path}.weight");
        let w = ws.get(&wp)?;
        expect_shape(&wp, w, &[out, inp, taps])?;
        let bp = format!("{path}.bias");
        let b = ws.get(&bp)?;
        expect_shape(&bp, b, &[out])?;
        Ok(Self { w: &w.data, b: &b.data, out, inp, taps })
    }

    #[inline]
    pub fn accumulate(&self, acc: &mut [f64], tap: usize, x: &[f64]) {
        for (o, a) in acc.iter_mut().enumerate() {
            let base = o * self.inp * self.taps + tap;
            let mut s = 0.0;
            for (i, v) in x.iter().enumerate() {
                s += self.w[base + i * self.taps] * v;
            }
            *a += s;
        }
    }
}

/// Scaled dot-product attention of one query over `keys`/`values` rows of
/// width `q.len()`, split into `heads` equal slices.
pub fn softmax_attention(q: &[f64], keys: &[f64], values: &[f64], heads: usize) -> Vec<f64> {
    let c = q.len();
    let n = keys.len() / c.max(1);
    let mut out = vec![0.0; c];
    if n == 0 || heads == 0 {
        return out;
    }
    let d = c / heads;
    let scale = 1.0 / sqrt(d as f64);
    let mut logits = vec![0.0; n];
    for h in 0..heads {
        let r = h * d..(h + 1) * d;
        let mut max = f64::NEG_INFINITY;
        for (j, l) in logits.iter_mut().enumerate() {
            let k = &keys[j * c..(j + 1) * c];
            *l = q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
            max = max.max(*l);
        }
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = exp(*l - max);
            total += *l;
        }
        for (j, l) in logits.iter().enumerate() {
            let w = l / total;
            for (o, v) in out[r.clone()].iter_mut().zip(&values[j * c + r.start..j * c + r.end]) {
                *o += w * v;
            }
        }
    }
    out
}

/// Sinusoidal encoding of integer grid coordinates; channel `d` encodes
/// axis `d % 3`.
pub(crate) fn positional_encoding(coord: [usize; 3], width: usize) -> Vec<f64> {
    (0..width)
        .map(|d| {
            let axis = d % 3;
            let slot = d / 3;
            let freq = 1.0 / crate::math::pow(100.0, (slot / 2) as f64 * 2.0 / (width as f64 / 3.0).max(1.0));
            let x = coord[axis] as f64 * freq;
            if slot % 2 == 0 {
                sin(x)
            } else {
                cos(x)
            }
        })
        .collect()
}

/// Pre-norm transformer over `n` tokens of width `w`, in place.
pub(crate) fn transformer(
    ws: &WeightStore,
    prefix: &str,
    layers: usize,
    heads: usize,
    x: &mut [f64],
    w: usize,
    exec: &dyn Executor,
) -> Result<(), BackboneError> {
    let n = x.len() / w;
    for i in 0..layers {
        let p = format!("{prefix}.layer{i}");
        let ln1g = ws.get(&format!("{p}.ln1.gain"))?;
        let ln1b = ws.get(&format!("{p}.ln1.bias"))?;
        let ln2g = ws.get(&format!("{p}.ln2.gain"))?;
        let ln2b = ws.get(&format!("{p}.ln2.bias"))?;
        let q = Linear::load(ws, &format!("{p}.attn.q"), w)?;
        let k = Linear::load(ws, &format!("{p}.attn.k"), w)?;
        let v = Linear::load(ws, &format!("{p}.attn.v"), w)?;
        let o = Linear::load(ws, &format!("{p}.attn.o"), w)?;
        let fc1 = Linear::load(ws, &format!("{p}.mlp.fc1"), w)?;
        let fc2 = Linear::load(ws, &format!("{p}.mlp.fc2"), fc1.out)?;

        let h: Vec<f64> = x.chunks_exact(w).flat_map(|r| layer_norm(r, &ln1g.data, &ln1b.data)).collect();
        let (qs, ks, vs) = (q.apply_rows(&h), k.apply_rows(&h), v.apply_rows(&h));
        let attn = exec.map(n, w, &|t| o.apply(&softmax_attention(&qs[t * w..(t + 1) * w], &ks, &vs, heads)));
        for (xv, d) in x.iter_mut().zip(attn) {
            *xv += d;
        }
        let xs: &[f64] = x;
        let mlp = exec.map(n, w, &|t| {
            let hn = layer_norm(&xs[t * w..(t + 1) * w], &ln2g.data, &ln2b.data);
            let mid: Vec<f64> = fc1.apply(&hn).into_iter().map(gelu).collect();
            fc2.apply(&mid)
        });
        for (xv, d) in x.iter_mut().zip(mlp) {
            *xv += d;
        }
    }
    Ok(())
}
