//! Dual isosurface extraction.
//!
//! The extractor works on the voxel-center lattice of a [`DenseVolume`].
//! Every lattice cell whose corners straddle the iso level gets one vertex
//! per connected crossing patch, placed at the mean of that patch's edge
//! crossings; every sign-changing lattice edge emits a quad joining the
//! patch vertices of its four surrounding cells. Cells with a single patch
//! behave exactly like Surface Nets. Faces with four crossings are paired
//! with the asymptotic decider, evaluated identically from both cells that
//! share the face, so every output edge is used by an even number of
//! faces and the surface has no boundary inside the lattice. A patch that
//! leaves a cell twice through the same face pinches into an edge used four
//! times; this needs sub-voxel topology and does not occur for smooth fields.
//!
//! Vertex positions are linear-interpolation crossings, so their
//! derivatives with respect to lattice values are available through
//! [`edge_vertex`] and [`extract_mesh_with_jacobian`].

use alloc::vec::Vec;

use thiserror::Error;

use crate::math::Vec3;
use crate::mesh::TriMesh;
use crate::volume::{DenseVolume, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshingError {
    #[error("edge endpoints must have opposite signs (got {a} and {b})")]
    SameSign { a: f64, b: f64 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Zero crossing on a segment with its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCrossing {
    pub t: f64,
    pub position: Vec3,
    pub d_position_d_a: Vec3,
    pub d_position_d_b: Vec3,
}

/// Linear-interpolation crossing between `pos_a` (value `a`) and `pos_b`
/// (value `b`): `t = a / (a - b)`.
pub fn edge_vertex(a: f64, b: f64, pos_a: &Vec3, pos_b: &Vec3) -> Result<EdgeCrossing, MeshingError> {
    if !(a * b < 0.0) {
        return Err(MeshingError::SameSign { a, b });
    }
    let d = a - b;
    let t = a / d;
    let dir = pos_b - pos_a;
    let dt_da = -b / (d * d);
    let dt_db = a / (d * d);
    Ok(EdgeCrossing { t, position: pos_a + dir * t, d_position_d_a: dir * dt_da, d_position_d_b: dir * dt_db })
}

/// Mesh plus the sparse Jacobian of every vertex position with respect to
/// the input volume values: `jacobian[v]` lists `(voxel index, dpos/dvalue)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedMesh {
    pub mesh: TriMesh,
    pub jacobian: Vec<Vec<(usize, Vec3)>>,
}

const NUDGE: f64 = 1e-8;

// Corner c = dx | dy << 1 | dz << 2.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

// Each cell face as four corners in cyclic order.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 1, 3, 2],
    [4, 5, 7, 6],
];

fn edge_index(c0: usize, c1: usize) -> usize {
    let key = (c0.min(c1), c0.max(c1));
    EDGES.iter().position(|e| *e == key).unwrap()
}

fn find(parent: &mut [usize; 12], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Groups the sign-changing edges of one cell into crossing patches.
/// Returns the patch id per edge (`u8::MAX` when the edge has no crossing)
/// and the patch count.
fn cell_patches(vals: &[f64; 8]) -> ([u8; 12], usize) {
    let crosses = |e: usize| {
        let (a, b) = EDGES[e];
        (vals[a] < 0.0) != (vals[b] < 0.0)
    };
    let mut parent = [0usize; 12];
    for (i, p) in parent.iter_mut().enumerate() {
        *p = i;
    }
    for face in FACES {
        let edges: [usize; 4] = [0, 1, 2, 3].map(|i| edge_index(face[i], face[(i + 1) % 4]));
        let active: Vec<usize> = (0..4).filter(|&i| crosses(edges[i])).collect();
        let mut link = |x: usize, y: usize| {
            let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
            parent[rx] = ry;
        };
        match active.len() {
            2 => link(edges[active[0]], edges[active[1]]),
            4 => {
                // Face edge i joins corners i and i+1. A cut-off corner
                // pairs its two incident edges (i-1 and i).
                let a = face.map(|c| vals[c]);
                let denom = a[0] + a[2] - a[1] - a[3];
                let saddle = if denom != 0.0 { (a[0] * a[2] - a[1] * a[3]) / denom } else { 0.0 };
                let diagonal_02_connected = (saddle < 0.0) == (a[0] < 0.0);
                let cut = if diagonal_02_connected { [1, 3] } else { [0, 2] };
                for c in cut {
                    link(edges[(c + 3) % 4], edges[c]);
                }
            }
            _ => {}
        }
    }
    let mut ids = [u8::MAX; 12];
    let mut roots: Vec<usize> = Vec::new();
    for e in 0..12 {
        if crosses(e) {
            let r = find(&mut parent, e);
            let id = match roots.iter().position(|x| *x == r) {
                Some(i) => i,
                None => {
                    roots.push(r);
                    roots.len() - 1
                }
            };
            ids[e] = id as u8;
        }
    }
    (ids, roots.len())
}

/// Extracts the `iso` level set. Returns an empty mesh when there is no
/// crossing.
pub fn extract_mesh(sdf: &DenseVolume, iso: f64) -> Result<TriMesh, MeshingError> {
    extract_mesh_with_jacobian(sdf, iso).map(|e| e.mesh)
}

pub fn extract_mesh_with_jacobian(sdf: &DenseVolume, iso: f64) -> Result<ExtractedMesh, MeshingError> {
    sdf.require_scalar()?;
    if !sdf.is_finite() {
        return Err(VolumeError::NonFinite.into());
    }
    let spec = sdf.spec;
    let [nx, ny, nz] = spec.resolution;
    let f: Vec<f64> = sdf
        .values
        .iter()
        .map(|v| {
            let d = v - iso;
            if d == 0.0 {
                NUDGE
            } else {
                d
            }
        })
        .collect();
    let centers = |i: usize, j: usize, k: usize| spec.voxel_center(i, j, k);

    // Gather: one vertex per patch of every active cell.
    let cell_index = |i: usize, j: usize, k: usize| i + (nx - 1) * (j + (ny - 1) * k);
    let mut active: Vec<(usize, [u32; 12])> = Vec::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut jacobian: Vec<Vec<(usize, Vec3)>> = Vec::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner_idx: [usize; 8] = core::array::from_fn(|c| spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)));
                let vals: [f64; 8] = corner_idx.map(|x| f[x]);
                let neg = vals.iter().filter(|v| **v < 0.0).count();
                if neg == 0 || neg == 8 {
                    continue;
                }
                let (ids, patches) = cell_patches(&vals);
                let base = vertices.len() as u32;
                let mut sums = alloc::vec![(Vec3::zeros(), 0usize); patches];
                let mut jac: Vec<Vec<(usize, Vec3)>> = alloc::vec![Vec::new(); patches];
                for (e, &(c0, c1)) in EDGES.iter().enumerate() {
                    if ids[e] == u8::MAX {
                        continue;
                    }
                    let p0 = centers(i + (c0 & 1), j + ((c0 >> 1) & 1), k + ((c0 >> 2) & 1));
                    let p1 = centers(i + (c1 & 1), j + ((c1 >> 1) & 1), k + ((c1 >> 2) & 1));
                    let x = edge_vertex(vals[c0], vals[c1], &p0, &p1)?;
                    let p = ids[e] as usize;
                    sums[p].0 += x.position;
                    sums[p].1 += 1;
                    jac[p].push((corner_idx[c0], x.d_position_d_a));
                    jac[p].push((corner_idx[c1], x.d_position_d_b));
                }
                for (p, (sum, n)) in sums.iter().enumerate() {
                    let inv = 1.0 / *n as f64;
                    vertices.push(sum * inv);
                    let mut entries: Vec<(usize, Vec3)> = jac[p].iter().map(|(idx, d)| (*idx, d * inv)).collect();
                    entries.sort_by_key(|(idx, _)| *idx);
                    let mut merged: Vec<(usize, Vec3)> = Vec::with_capacity(entries.len());
                    for (idx, d) in entries {
                        match merged.last_mut() {
                            Some((last, acc)) if *last == idx => *acc += d,
                            _ => merged.push((idx, d)),
                        }
                    }
                    jacobian.push(merged);
                }
                let mut per_edge = [u32::MAX; 12];
                for e in 0..12 {
                    if ids[e] != u8::MAX {
                        per_edge[e] = base + ids[e] as u32;
                    }
                }
                active.push((cell_index(i, j, k), per_edge));
            }
        }
    }

    // Stitch: one quad per interior sign-changing lattice edge.
    let lookup = |cell: usize, local_edge: usize| -> u32 {
        match active.binary_search_by_key(&cell, |(c, _)| *c) {
            Ok(pos) => active[pos].1[local_edge],
            Err(_) => u32::MAX,
        }
    };
    let res = [nx, ny, nz];
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = [i, j, k];
                let f0 = f[spec.index(i, j, k)];
                for a in 0..3 {
                    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                    if p[a] + 1 >= res[a] || p[b] == 0 || p[b] + 1 >= res[b] || p[c] == 0 || p[c] + 1 >= res[c] {
                        continue;
                    }
                    let mut q = p;
                    q[a] += 1;
                    let f1 = f[spec.index(q[0], q[1], q[2])];
                    if (f0 < 0.0) == (f1 < 0.0) {
                        continue;
                    }
                    let mut quad = [0u32; 4];
                    for (slot, (ob, oc)) in [(1usize, 1usize), (0, 1), (0, 0), (1, 0)].iter().enumerate() {
                        let mut cell = p;
                        cell[b] -= ob;
                        cell[c] -= oc;
                        let mut lc = [0usize; 3];
                        lc[b] = *ob;
                        lc[c] = *oc;
                        let c0 = lc[0] | (lc[1] << 1) | (lc[2] << 2);
                        let mut lc1 = lc;
                        lc1[a] = 1;
                        let c1 = lc1[0] | (lc1[1] << 1) | (lc1[2] << 2);
                        quad[slot] = lookup(cell_index(cell[0], cell[1], cell[2]), edge_index(c0, c1));
                    }
                    debug_assert!(quad.iter().all(|v| *v != u32::MAX));
                    if f0 >= 0.0 {
                        quad.reverse();
                    }
                    let d02 = (vertices[quad[0] as usize] - vertices[quad[2] as usize]).norm_squared();
                    let d13 = (vertices[quad[1] as usize] - vertices[quad[3] as usize]).norm_squared();
                    if d02 <= d13 {
                        faces.push([quad[0], quad[1], quad[2]]);
                        faces.push([quad[0], quad[2], quad[3]]);
                    } else {
                        faces.push([quad[0], quad[1], quad[3]]);
                        faces.push([quad[1], quad[2], quad[3]]);
                    }
                }
            }
        }
    }

    let mut mesh = TriMesh::new(vertices, faces);
    cleanup(&mut mesh, &mut jacobian, spec.min_voxel_size());
    Ok(ExtractedMesh { mesh, jacobian })
}

/// Removes zero-area and duplicate faces, then unreferenced vertices.
fn cleanup(mesh: &mut TriMesh, jacobian: &mut Vec<Vec<(usize, Vec3)>>, scale: f64) {
    let min_cross = 1e-12 * scale * scale;
    let mut seen: Vec<[u32; 3]> = Vec::with_capacity(mesh.faces.len());
    let mut kept = Vec::with_capacity(mesh.faces.len());
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] || mesh.face_cross(fi).norm() <= min_cross {
            continue;
        }
        kept.push(*f);
        let mut key = *f;
        key.sort_unstable();
        seen.push(key);
    }
    let mut order: Vec<usize> = (0..seen.len()).collect();
    order.sort_by_key(|i| seen[*i]);
    let mut drop = alloc::vec![false; kept.len()];
    for w in order.windows(2) {
        if seen[w[0]] == seen[w[1]] {
            drop[w[0].max(w[1])] = true;
        }
    }
    mesh.faces = kept.into_iter().zip(drop).filter(|(_, d)| !d).map(|(f, _)| f).collect();

    let mut used = alloc::vec![false; mesh.vertices.len()];
    for f in &mesh.faces {
        for &i in f {
            used[i as usize] = true;
        }
    }
    let old_jac = core::mem::take(jacobian);
    *jacobian = old_jac.into_iter().zip(&used).filter(|(_, u)| **u).map(|(j, _)| j).collect();
    mesh.compact();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use crate::volume::{Aabb, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(res: usize, half: f64) -> GridSpec {
        GridSpec::cubic(res, Aabb::centered_cube(half)).unwrap()
    }

    #[test]
    fn crossing_midpoint_and_quarter() {
        let (a, b) = (Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0));
        let x = edge_vertex(-1.0, 1.0, &a, &b).unwrap();
        assert_eq!(x.t, 0.5);
        let x = edge_vertex(-1.0, 3.0, &a, &b).unwrap();
        assert_eq!(x.t, 0.25);
        assert!((x.position - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(edge_vertex(1.0, 2.0, &a, &b), Err(MeshingError::SameSign { a: 1.0, b: 2.0 }));
    }

    #[test]
    fn crossing_derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-4;
        for _ in 0..100 {
            let a = -(0.2 + rng.random::<f64>());
            let b = 0.2 + rng.random::<f64>();
            let pa = Vec3::new(rng.random(), rng.random(), rng.random());
            let pb = Vec3::new(rng.random(), rng.random(), rng.random());
            let x = edge_vertex(a, b, &pa, &pb).unwrap();
            let fd_a = (edge_vertex(a + h, b, &pa, &pb).unwrap().position - edge_vertex(a - h, b, &pa, &pb).unwrap().position) / (2.0 * h);
            let fd_b = (edge_vertex(a, b + h, &pa, &pb).unwrap().position - edge_vertex(a, b - h, &pa, &pb).unwrap().position) / (2.0 * h);
            assert!((fd_a - x.d_position_d_a).norm() <= 1e-4 * x.d_position_d_a.norm().max(1e-12));
            assert!((fd_b - x.d_position_d_b).norm() <= 1e-4 * x.d_position_d_b.norm().max(1e-12));
        }
    }

    #[test]
    fn no_crossing_gives_empty_mesh() {
        let sdf = DenseVolume::filled(grid(8, 1.0), 0.3);
        assert!(extract_mesh(&sdf, 0.0).unwrap().is_empty());
    }

    #[test]
    fn plane_vertices_are_exact() {
        let sdf = DenseVolume::from_fn(grid(32, 1.0), |p| p.z - 0.25);
        let m = extract_mesh(&sdf, 0.0).unwrap();
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v.z - 0.25).abs() < 1e-5);
        }
        // Outward (+z) winding for a negative-below field.
        let vn = m.vertex_normals();
        assert!(vn.normals.iter().all(|n| n.z > 0.99));
    }

    #[test]
    fn sphere_vertices_are_close_to_the_sphere() {
        let spec = grid(64, 1.2);
        let sdf = DenseVolume::from_fn(spec, |p| p.norm() - 1.0);
        let m = extract_mesh(&sdf, 0.0).unwrap();
        let vs = spec.min_voxel_size();
        for v in &m.vertices {
            assert!((v.norm() - 1.0).abs() < vs);
            assert!(sdf.sample(v).unwrap().values[0].abs() < 1e-3 * spec.bounds.max_extent());
        }
        assert!(m.is_closed_manifold());
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn torus_has_genus_one() {
        let sdf = DenseVolume::from_fn(grid(48, 0.5), |p| shapes::torus_sdf(&p, 0.28, 0.1));
        let m = extract_mesh(&sdf, 0.0).unwrap();
        assert!(m.is_closed_manifold());
        assert_eq!(m.euler_characteristic(), 0);
    }

    #[test]
    fn random_fields_are_watertight() {
        // Saddle faces everywhere. The border is kept positive so the
        // surface closes.
        let spec = grid(12, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sdf = DenseVolume::from_fn(spec, |_| rng.random::<f64>() - 0.5);
        let mut sdf = sdf;
        for idx in 0..sdf.values.len() {
            let c = spec.coords(idx);
            if c.iter().any(|x| *x == 0 || *x == 11) {
                sdf.values[idx] = 1.0;
            }
        }
        let m = extract_mesh(&sdf, 0.0).unwrap();
        assert!(!m.is_empty());
        let counts: Vec<usize> = m.edge_incidence().iter().map(|(_, c)| *c).collect();
        assert!(counts.iter().all(|c| c % 2 == 0));
        assert!(counts.iter().filter(|c| **c == 2).count() * 10 > counts.len() * 9);
    }

    #[test]
    fn output_has_no_duplicates_or_unreferenced_vertices() {
        let sdf = DenseVolume::from_fn(grid(20, 0.5), |p| shapes::composite_sdf(&p));
        let m = extract_mesh(&sdf, 0.0).unwrap();
        let mut used = alloc::vec![false; m.vertices.len()];
        let mut keys: Vec<[u32; 3]> = m
            .faces
            .iter()
            .map(|f| {
                for &i in f {
                    used[i as usize] = true;
                }
                let mut k = *f;
                k.sort_unstable();
                k
            })
            .collect();
        assert!(used.iter().all(|u| *u));
        let n = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), n);
        for fi in 0..m.faces.len() {
            assert!(m.face_area(fi) > 0.0);
        }
    }

    #[test]
    fn zero_corner_is_nudged() {
        let sdf = DenseVolume::from_fn(grid(8, 1.0), |p| p.x);
        // Voxel centers are at odd multiples of 1/8, so force an exact zero.
        let mut sdf = sdf;
        sdf.values[sdf.spec.index(3, 3, 3)] = 0.0;
        let m = extract_mesh(&sdf, 0.0).unwrap();
        assert!(!m.is_empty());
        m.validate().unwrap();
    }

    #[test]
    fn vertex_jacobian_matches_finite_differences() {
        let spec = grid(10, 1.0);
        let sdf = DenseVolume::from_fn(spec, |p| (p - Vec3::new(0.05, -0.03, 0.02)).norm() - 0.55);
        let base = extract_mesh_with_jacobian(&sdf, 0.0).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for v in (0..base.mesh.vertices.len()).step_by(7) {
            for &(idx, d) in &base.jacobian[v] {
                let mut plus = sdf.clone();
                plus.values[idx] += h;
                let mut minus = sdf.clone();
                minus.values[idx] -= h;
                let p = extract_mesh(&plus, 0.0).unwrap();
                let m = extract_mesh(&minus, 0.0).unwrap();
                assert_eq!(p.faces, base.mesh.faces);
                let fd = (p.vertices[v] - m.vertices[v]) / (2.0 * h);
                assert!((fd - d).norm() <= 1e-4 * d.norm().max(1e-9), "{fd:?} {d:?}");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }
}
