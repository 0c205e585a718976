use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::attention::{pixel_token, CrossAttention, PreparedView};
use super::config::{ArchConfig, UNetConfig};
use super::exec::Executor;
use super::nn::{positional_encoding, silu, transformer, Conv, Linear};
use super::weights::WeightStore;
use super::{BackboneError, SPARSE_VOXELFORMER, VOXELFORMER};
use crate::math::Vec3;
use crate::volume::{Aabb, DenseVolume, GridSpec, SparseVoxelGrid};

/// Where the sample point of a dense voxel sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Voxel centers, `min + (c + 1/2) * size`.
    Centers,
    /// Corner lattice, `min + c * size`, as used by sparse grids.
    Lattice,
}

/// Site layout of every UNet level plus the three operations that depend
/// on it. Level 0 is the finest.
trait Topology: Sync {
    fn sites(&self, level: usize) -> usize;
    fn coord(&self, level: usize, i: usize) -> [usize; 3];
    fn position(&self, level: usize, i: usize) -> Vec3;
    /// 3×3×3 convolution; absent neighbors contribute zero.
    fn conv(&self, level: usize, x: &[f64], conv: &Conv, exec: &dyn Executor) -> Vec<f64>;
    /// Mean of the present children at `level + 1`, or a copy when the
    /// resolution does not change.
    fn pool(&self, level: usize, x: &[f64], c: usize) -> Vec<f64>;
    /// Nearest upsampling from `level + 1` to `level`.
    fn upsample(&self, level: usize, x: &[f64], c: usize) -> Vec<f64>;
}

#[inline]
fn tap(d: [i64; 3]) -> usize {
    ((d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1)) as usize
}

fn lattice_spacing(bounds: &Aabb, res: usize) -> Vec3 {
    bounds.extent() / res as f64
}

struct Dense {
    res: Vec<usize>,
    bounds: Aabb,
    placement: Placement,
}

impl Dense {
    fn index(&self, level: usize, c: [usize; 3]) -> usize {
        let r = self.res[level];
        c[0] + r * (c[1] + r * c[2])
    }
}

impl Topology for Dense {
    fn sites(&self, level: usize) -> usize {
        self.res[level].pow(3)
    }

    fn coord(&self, level: usize, i: usize) -> [usize; 3] {
        let r = self.res[level];
        [i % r, (i / r) % r, i / (r * r)]
    }

    fn position(&self, level: usize, i: usize) -> Vec3 {
        let c = self.coord(level, i);
        let off = match self.placement {
            Placement::Centers => 0.5,
            Placement::Lattice => 0.0,
        };
        let s = lattice_spacing(&self.bounds, self.res[level]);
        self.bounds.min + Vec3::new((c[0] as f64 + off) * s.x, (c[1] as f64 + off) * s.y, (c[2] as f64 + off) * s.z)
    }

    fn conv(&self, level: usize, x: &[f64], conv: &Conv, exec: &dyn Executor) -> Vec<f64> {
        let r = self.res[level] as i64;
        exec.map(self.sites(level), conv.out, &|i| {
            let c = self.coord(level, i);
            let mut acc = conv.b.to_vec();
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let n = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                        if n.iter().any(|&v| v < 0 || v >= r) {
                            continue;
                        }
                        let j = self.index(level, n.map(|v| v as usize));
                        conv.accumulate(&mut acc, tap([dx, dy, dz]), &x[j * conv.inp..(j + 1) * conv.inp]);
                    }
                }
            }
            acc
        })
    }

    fn pool(&self, level: usize, x: &[f64], c: usize) -> Vec<f64> {
        if self.res[level + 1] == self.res[level] {
            return x.to_vec();
        }
        let mut out = vec![0.0; self.sites(level + 1) * c];
        for i in 0..self.sites(level + 1) {
            let p = self.coord(level + 1, i);
            for d in 0..8 {
                let child = [2 * p[0] + (d & 1), 2 * p[1] + ((d >> 1) & 1), 2 * p[2] + ((d >> 2) & 1)];
                let j = self.index(level, child);
                for k in 0..c {
                    out[i * c + k] += x[j * c + k] / 8.0;
                }
            }
        }
        out
    }

    fn upsample(&self, level: usize, x: &[f64], c: usize) -> Vec<f64> {
        if self.res[level + 1] == self.res[level] {
            return x.to_vec();
        }
        let mut out = Vec::with_capacity(self.sites(level) * c);
        for i in 0..self.sites(level) {
            let p = self.coord(level, i).map(|v| v / 2);
            let j = self.index(level + 1, p);
            out.extend_from_slice(&x[j * c..(j + 1) * c]);
        }
        out
    }
}

struct Sparse {
    res: Vec<usize>,
    bounds: Aabb,
    coords: Vec<Vec<[u32; 3]>>,
    /// Parent index at `level + 1` of every site at `level`.
    parents: Vec<Vec<usize>>,
}

impl Sparse {
    fn new(res: Vec<usize>, bounds: Aabb, fine: Vec<[u32; 3]>) -> Self {
        let mut coords = vec![fine];
        let mut parents = Vec::new();
        for l in 1..res.len() {
            let prev = &coords[l - 1];
            if res[l] == res[l - 1] {
                parents.push((0..prev.len()).collect());
                coords.push(prev.clone());
                continue;
            }
            let mut next: Vec<[u32; 3]> = prev.iter().map(|c| c.map(|v| v / 2)).collect();
            next.sort_unstable();
            next.dedup();
            parents.push(prev.iter().map(|c| next.binary_search(&c.map(|v| v / 2)).unwrap_or(0)).collect());
            coords.push(next);
        }
        Self { res, bounds, coords, parents }
    }

    fn find(&self, level: usize, c: [i64; 3]) -> Option<usize> {
        let r = self.res[level] as i64;
        if c.iter().any(|&v| v < 0 || v >= r) {
            return None;
        }
        self.coords[level].binary_search(&c.map(|v| v as u32)).ok()
    }
}

impl Topology for Sparse {
    fn sites(&self, level: usize) -> usize {
        self.coords[level].len()
    }

    fn coord(&self, level: usize, i: usize) -> [usize; 3] {
        self.coords[level][i].map(|v| v as usize)
    }

    fn position(&self, level: usize, i: usize) -> Vec3 {
        let c = self.coords[level][i];
        let s = lattice_spacing(&self.bounds, self.res[level]);
        self.bounds.min + Vec3::new(c[0] as f64 * s.x, c[1] as f64 * s.y, c[2] as f64 * s.z)
    }

    fn conv(&self, level: usize, x: &[f64], conv: &Conv, exec: &dyn Executor) -> Vec<f64> {
        exec.map(self.sites(level), conv.out, &|i| {
            let c = self.coords[level][i].map(|v| v as i64);
            let mut acc = conv.b.to_vec();
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if let Some(j) = self.find(level, [c[0] + dx, c[1] + dy, c[2] + dz]) {
                            conv.accumulate(&mut acc, tap([dx, dy, dz]), &x[j * conv.inp..(j + 1) * conv.inp]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pool(&self, level: usize, x: &[f64], c: usize) -> Vec<f64> {
        let n = self.sites(level + 1);
        let mut sum = vec![0.0; n * c];
        let mut count = vec![0usize; n];
        for (i, &p) in self.parents[level].iter().enumerate() {
            count[p] += 1;
            for k in 0..c {
                sum[p * c + k] += x[i * c + k];
            }
        }
        for (p, &k) in count.iter().enumerate() {
            for v in &mut sum[p * c..(p + 1) * c] {
                *v /= k as f64;
            }
        }
        sum
    }

    fn upsample(&self, level: usize, x: &[f64], c: usize) -> Vec<f64> {
        self.parents[level].iter().flat_map(|&p| x[p * c..(p + 1) * c].iter().copied()).collect()
    }
}

struct Ctx<'a> {
    cfg: &'a UNetConfig,
    ws: &'a WeightStore,
    prefix: &'a str,
    views: &'a [PreparedView<'a>],
    pixel_width: usize,
    exec: &'a dyn Executor,
}

impl Ctx<'_> {
    fn res_block(&self, topo: &dyn Topology, level: usize, path: &str, x: &[f64], c: usize) -> Result<Vec<f64>, BackboneError> {
        let conv1 = Conv::load(self.ws, &format!("{path}.conv1"), c, c, 27)?;
        let conv2 = Conv::load(self.ws, &format!("{path}.conv2"), c, c, 27)?;
        let h: Vec<f64> = topo.conv(level, x, &conv1, self.exec).into_iter().map(silu).collect();
        let h = topo.conv(level, &h, &conv2, self.exec);
        Ok(x.iter().zip(h).map(|(a, b)| a + b).collect())
    }

    fn cross_attend(&self, topo: &dyn Topology, level: usize, x: &[f64], c: usize) -> Result<Vec<f64>, BackboneError> {
        let attn = CrossAttention::load(
            self.ws,
            &format!("{}.level{level}.xattn", self.prefix),
            c,
            self.pixel_width,
            self.cfg.attention_heads,
        )?;
        let delta = self.exec.map(topo.sites(level), c, &|i| {
            let p = topo.position(level, i);
            let pixels: Vec<Vec<f64>> = self.views.iter().filter_map(|v| pixel_token(v, &p)).collect();
            // Widths were checked when the layer was loaded.
            attn.apply(&x[i * c..(i + 1) * c], &pixels).unwrap_or_else(|_| vec![0.0; c])
        });
        Ok(x.iter().zip(delta).map(|(a, b)| a + b).collect())
    }

    fn linear_rows(&self, path: &str, x: &[f64], inp: usize) -> Result<Vec<f64>, BackboneError> {
        Ok(Linear::load(self.ws, path, inp)?.apply_rows(x))
    }

    fn run(&self, topo: &dyn Topology, input: &[f64]) -> Result<Vec<f64>, BackboneError> {
        let levels = &self.cfg.levels;
        let p = self.prefix;
        let mut x = input.to_vec();
        let mut skips = Vec::with_capacity(levels.len());
        for (l, lv) in levels.iter().enumerate() {
            let c = lv.channels;
            x = self.res_block(topo, l, &format!("{p}.level{l}.res"), &x, c)?;
            x = self.cross_attend(topo, l, &x, c)?;
            skips.push(x.clone());
            if l + 1 < levels.len() {
                let pooled = topo.pool(l, &x, c);
                x = self.linear_rows(&format!("{p}.down{l}"), &pooled, c)?;
            }
        }

        let last = levels.len() - 1;
        let t = &self.cfg.transformer;
        let cb = levels[last].channels;
        let projected = t.width != cb;
        if projected {
            x = self.linear_rows(&format!("{p}.bottleneck.in"), &x, cb)?;
        }
        for i in 0..topo.sites(last) {
            let pe = positional_encoding(topo.coord(last, i), t.width);
            for (v, e) in x[i * t.width..(i + 1) * t.width].iter_mut().zip(pe) {
                *v += e;
            }
        }
        transformer(self.ws, &format!("{p}.bottleneck"), t.layers, t.heads, &mut x, t.width, self.exec)?;
        if projected {
            x = self.linear_rows(&format!("{p}.bottleneck.out"), &x, t.width)?;
        }

        for l in (0..last).rev() {
            let c = levels[l].channels;
            let up = topo.upsample(l, &x, levels[l + 1].channels);
            let up = self.linear_rows(&format!("{p}.up{l}.proj"), &up, levels[l + 1].channels)?;
            let skip = &skips[l];
            let cat: Vec<f64> = (0..topo.sites(l))
                .flat_map(|i| skip[i * c..(i + 1) * c].iter().chain(&up[i * c..(i + 1) * c]).copied())
                .collect();
            let fused = self.linear_rows(&format!("{p}.up{l}.fuse"), &cat, 2 * c)?;
            x = self.res_block(topo, l, &format!("{p}.up{l}.res"), &fused, c)?;
        }
        self.linear_rows(&format!("{p}.head"), &x, levels[0].channels)
    }
}

fn check_input(cfg: &UNetConfig, n: usize, input: &[f64]) -> Result<(), BackboneError> {
    let c = cfg.levels[0].channels;
    if input.len() != n * c {
        return Err(BackboneError::Width { what: "input features", expected: n * c, got: input.len() });
    }
    Ok(())
}

/// Dense UNet over a cubic grid of `cfg.levels[0].resolution`³ sites in
/// `bounds`, x-fastest. `input` holds `levels[0].channels` values per site;
/// the result holds `out_channels` per site.
#[allow(clippy::too_many_arguments)]
pub fn dense_unet_forward(
    cfg: &UNetConfig,
    ws: &WeightStore,
    prefix: &str,
    views: &[PreparedView],
    pixel_width: usize,
    bounds: &Aabb,
    placement: Placement,
    input: &[f64],
    exec: &dyn Executor,
) -> Result<Vec<f64>, BackboneError> {
    cfg.validate(prefix)?;
    let topo = Dense { res: cfg.levels.iter().map(|l| l.resolution).collect(), bounds: *bounds, placement };
    check_input(cfg, topo.sites(0), input)?;
    Ctx { cfg, ws, prefix, views, pixel_width, exec }.run(&topo, input)
}

/// Sparse UNet over the occupied sites of `grid`. Sites keep their
/// coordinates through every level; coarser levels hold the unique halved
/// coordinates.
pub fn sparse_unet_forward(
    cfg: &UNetConfig,
    ws: &WeightStore,
    prefix: &str,
    views: &[PreparedView],
    pixel_width: usize,
    grid: &SparseVoxelGrid,
    exec: &dyn Executor,
) -> Result<Vec<f64>, BackboneError> {
    cfg.validate(prefix)?;
    if grid.is_empty() {
        return Err(BackboneError::EmptyGrid);
    }
    let r0 = cfg.levels[0].resolution;
    if grid.spec.resolution != [r0; 3] {
        return Err(BackboneError::Resolution { expected: r0, got: grid.spec.resolution });
    }
    if grid.channels != cfg.levels[0].channels {
        return Err(BackboneError::Width { what: "sparse grid features", expected: cfg.levels[0].channels, got: grid.channels });
    }
    let topo = Sparse::new(cfg.levels.iter().map(|l| l.resolution).collect(), grid.spec.bounds, grid.coords.clone());
    check_input(cfg, topo.sites(0), &grid.features)?;
    Ctx { cfg, ws, prefix, views, pixel_width, exec }.run(&topo, &grid.features)
}

/// Coarse occupancy logits over `bounds`, sampled at voxel centers. Every
/// voxel starts from the shared input token.
pub fn voxelformer_forward(
    arch: &ArchConfig,
    ws: &WeightStore,
    views: &[PreparedView],
    bounds: &Aabb,
    exec: &dyn Executor,
) -> Result<DenseVolume, BackboneError> {
    let cfg = &arch.voxelformer;
    cfg.validate(VOXELFORMER)?;
    if views.is_empty() {
        return Err(BackboneError::NoViews);
    }
    let r = cfg.levels[0].resolution;
    let spec = GridSpec::cubic(r, *bounds)?;
    let token = ws.get(&format!("{VOXELFORMER}.input_token"))?;
    let input: Vec<f64> = (0..spec.voxel_count()).flat_map(|_| token.data.iter().copied()).collect();
    let out = dense_unet_forward(cfg, ws, VOXELFORMER, views, arch.pixel_width(), bounds, Placement::Centers, &input, exec)?;
    Ok(DenseVolume::new(spec, cfg.out_channels, out)?)
}

/// Features for every site of `grid`, same coordinates, `out_channels`
/// wide.
pub fn sparsevoxelformer_forward(
    arch: &ArchConfig,
    ws: &WeightStore,
    views: &[PreparedView],
    grid: &SparseVoxelGrid,
    exec: &dyn Executor,
) -> Result<SparseVoxelGrid, BackboneError> {
    if views.is_empty() {
        return Err(BackboneError::NoViews);
    }
    let cfg = &arch.sparse_voxelformer;
    let out = sparse_unet_forward(cfg, ws, SPARSE_VOXELFORMER, views, arch.pixel_width(), grid, exec)?;
    Ok(grid.with_features(cfg.out_channels, out)?)
}
