//! Signed distance volumes from closed triangle meshes.
//!
//! Magnitudes are exact point-triangle distances found through a uniform
//! grid of triangle buckets. Signs come from ray parity along three fixed,
//! slightly jittered directions with a majority vote, so a ray grazing an
//! edge or vertex cannot flip a voxel on its own. Inside is negative.

use alloc::vec::Vec;

use crate::math::{ceil, floor, pow, sqrt, Vec3};
use crate::mesh::TriMesh;
use crate::volume::{Aabb, DenseVolume, GridSpec, VolumeError};

/// Closest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

/// Ray parameter of the hit with triangle `abc`, if any (Möller-Trumbore).
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    (t > 0.0).then_some(t)
}

/// Uniform grid of triangle buckets, stored CSR style.
#[derive(Debug, Clone)]
pub struct TriangleGrid {
    bounds: Aabb,
    dims: [usize; 3],
    cell: Vec3,
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl TriangleGrid {
    pub fn build(mesh: &TriMesh) -> Option<Self> {
        let raw = mesh.bounds()?;
        let pad = 1e-9 * raw.max_extent().max(1e-12) + 1e-12;
        let bounds = Aabb::new(raw.min - Vec3::repeat(pad), raw.max + Vec3::repeat(pad));
        let ext = bounds.extent();
        let target = (mesh.faces.len() as f64 / 2.0).max(1.0);
        let size = pow(ext.x * ext.y * ext.z / target, 1.0 / 3.0).max(ext.max() / 128.0);
        let dims = [0, 1, 2].map(|a| (ceil(ext[a] / size) as usize).clamp(1, 128));
        let cell = Vec3::new(ext.x / dims[0] as f64, ext.y / dims[1] as f64, ext.z / dims[2] as f64);
        let mut grid = Self { bounds, dims, cell, starts: Vec::new(), items: Vec::new() };

        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = alloc::vec![0u32; ncells + 1];
        let ranges: Vec<([usize; 3], [usize; 3])> = (0..mesh.faces.len())
            .map(|f| {
                let t = mesh.triangle(f);
                let b = Aabb::from_points(t.iter()).unwrap();
                (grid.cell_of(&b.min), grid.cell_of(&b.max))
            })
            .collect();
        for (lo, hi) in &ranges {
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        counts[grid.cell_index([i, j, k]) + 1] += 1;
                    }
                }
            }
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        grid.items = alloc::vec![0u32; counts[ncells] as usize];
        for (f, (lo, hi)) in ranges.iter().enumerate() {
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let c = grid.cell_index([i, j, k]);
                        grid.items[fill[c] as usize] = f as u32;
                        fill[c] += 1;
                    }
                }
            }
        }
        grid.starts = counts;
        Some(grid)
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let g = floor((p[a] - self.bounds.min[a]) / self.cell[a]);
            (g.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn cell_index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    fn bucket(&self, c: [usize; 3]) -> &[u32] {
        let i = self.cell_index(c);
        &self.items[self.starts[i] as usize..self.starts[i + 1] as usize]
    }
}

const SIGN_RAYS: [[f64; 3]; 3] = [
    [1.0, 0.012_345_6, 0.037_110_3],
    [0.021_357_9, 1.0, -0.031_415_9],
    [-0.017_724_5, 0.029_129_4, 1.0],
];

/// Point queries against a closed mesh.
#[derive(Debug, Clone)]
pub struct SdfEvaluator<'a> {
    mesh: &'a TriMesh,
    grid: TriangleGrid,
    rays: [Vec3; 3],
}

impl<'a> SdfEvaluator<'a> {
    /// Fails on empty or non-closed meshes.
    pub fn new(mesh: &'a TriMesh) -> Result<Self, VolumeError> {
        if mesh.faces.is_empty() {
            return Err(VolumeError::EmptyMesh);
        }
        let open_edges = mesh.open_edge_count();
        if open_edges > 0 {
            return Err(VolumeError::OpenMesh { open_edges });
        }
        let grid = TriangleGrid::build(mesh).ok_or(VolumeError::EmptyMesh)?;
        let rays = SIGN_RAYS.map(|d| Vec3::from(d).normalize());
        Ok(Self { mesh, grid, rays })
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> f64 {
        let g = &self.grid;
        let q = Vec3::new(
            p.x.clamp(g.bounds.min.x, g.bounds.max.x),
            p.y.clamp(g.bounds.min.y, g.bounds.max.y),
            p.z.clamp(g.bounds.min.z, g.bounds.max.z),
        );
        let outside2 = (p - q).norm_squared();
        let center = g.cell_of(&q);
        let cmin = g.cell.min();
        let max_ring = g.dims.iter().copied().max().unwrap();
        let mut best2 = f64::INFINITY;
        for r in 0..=max_ring {
            let lo = center.map(|c| c.saturating_sub(r));
            let hi = [0, 1, 2].map(|a| (center[a] + r).min(g.dims[a] - 1));
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let ring = [i.abs_diff(center[0]), j.abs_diff(center[1]), k.abs_diff(center[2])];
                        if ring.iter().copied().max().unwrap() != r {
                            continue;
                        }
                        for &f in g.bucket([i, j, k]) {
                            let [a, b, c] = self.mesh.triangle(f as usize);
                            let d2 = (p - closest_point_on_triangle(p, &a, &b, &c)).norm_squared();
                            if d2 < best2 {
                                best2 = d2;
                            }
                        }
                    }
                }
            }
            let reach = r as f64 * cmin;
            if best2 <= outside2 + reach * reach {
                break;
            }
        }
        sqrt(best2)
    }

    fn ray_parity(&self, origin: &Vec3, dir: &Vec3) -> bool {
        let g = &self.grid;
        // Clip the ray to the grid box.
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < g.bounds.min[a] || origin[a] > g.bounds.max[a] {
                    return false;
                }
                continue;
            }
            let ta = (g.bounds.min[a] - origin[a]) / dir[a];
            let tb = (g.bounds.max[a] - origin[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        if t0 > t1 {
            return false;
        }
        let start = origin + dir * t0;
        let mut cell = g.cell_of(&start);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if dir[a] > 0.0 {
                step[a] = 1;
                let next = g.bounds.min[a] + (cell[a] + 1) as f64 * g.cell[a];
                t_max[a] = (next - origin[a]) / dir[a];
                t_delta[a] = g.cell[a] / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                let next = g.bounds.min[a] + cell[a] as f64 * g.cell[a];
                t_max[a] = (next - origin[a]) / dir[a];
                t_delta[a] = -g.cell[a] / dir[a];
            }
        }
        let mut hits: Vec<u32> = Vec::new();
        loop {
            for &f in g.bucket(cell) {
                let [a, b, c] = self.mesh.triangle(f as usize);
                if ray_triangle(origin, dir, &a, &b, &c).is_some() {
                    hits.push(f);
                }
            }
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[axis] > t1 {
                break;
            }
            let next = cell[axis] as i64 + step[axis];
            if next < 0 || next >= g.dims[axis] as i64 {
                break;
            }
            cell[axis] = next as usize;
            t_max[axis] += t_delta[axis];
        }
        hits.sort_unstable();
        hits.dedup();
        hits.len() % 2 == 1
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        let votes = self.rays.iter().filter(|d| self.ray_parity(p, d)).count();
        votes >= 2
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = self.unsigned_distance(p);
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

/// Signed distance from every voxel center of `spec` to a closed mesh,
/// negative inside.
pub fn mesh_to_sdf(mesh: &TriMesh, spec: &GridSpec) -> Result<DenseVolume, VolumeError> {
    let eval = SdfEvaluator::new(mesh)?;
    let mb = mesh.bounds().ok_or(VolumeError::EmptyMesh)?;
    if !spec.bounds.contains_box(&mb, 1e-9 * spec.bounds.max_extent()) {
        return Err(VolumeError::MeshOutsideBounds);
    }
    Ok(DenseVolume::from_fn(*spec, |p| eval.signed_distance(&p)))
}
