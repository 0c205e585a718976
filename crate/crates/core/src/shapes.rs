//! Analytic fixture shapes: closed meshes and their exact SDFs.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{cos, log, sin, sqrt, Vec3};
use crate::mesh::TriMesh;

/// Named fixture used by tests and the fixture generator. All of them fit in
/// the unit cube centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Torus,
    Composite,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Sphere, Shape::Cube, Shape::Torus, Shape::Composite];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sphere" => Some(Self::Sphere),
            "cube" => Some(Self::Cube),
            "torus" => Some(Self::Torus),
            "composite" => Some(Self::Composite),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Cube => "cube",
            Self::Torus => "torus",
            Self::Composite => "composite",
        }
    }

    pub fn mesh(&self) -> TriMesh {
        match self {
            Self::Sphere => icosphere(0.35, 4),
            Self::Cube => cube_mesh(0.28, 8),
            Self::Torus => torus_mesh(0.28, 0.1, 64, 32),
            Self::Composite => composite_mesh(),
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Self::Sphere => sphere_sdf(p, &Vec3::zeros(), 0.35),
            Self::Cube => box_sdf(p, &Vec3::zeros(), &Vec3::repeat(0.28)),
            Self::Torus => torus_sdf(p, 0.28, 0.1),
            Self::Composite => composite_sdf(p),
        }
    }

    /// Mesh with the fixture color texture and its geometric normals as the
    /// normal texture.
    pub fn textured_mesh(&self) -> TriMesh {
        with_fixture_textures(self.mesh())
    }
}

/// Smooth color field used to texture fixtures, values in [0.1, 0.9].
pub fn fixture_color(p: &Vec3) -> Vec3 {
    Vec3::new(
        0.5 + 0.4 * sin(7.0 * p.x + 0.5),
        0.5 + 0.4 * sin(5.0 * p.y - 1.0 + 3.0 * p.z),
        0.5 + 0.4 * cos(6.0 * p.z + 2.0 * p.x),
    )
}

pub fn with_fixture_textures(mut mesh: TriMesh) -> TriMesh {
    mesh.colors = Some(mesh.vertices.iter().map(fixture_color).collect());
    mesh.normals = Some(mesh.vertex_normals().normals);
    mesh
}

pub fn sphere_sdf(p: &Vec3, center: &Vec3, radius: f64) -> f64 {
    (p - center).norm() - radius
}

pub fn box_sdf(p: &Vec3, center: &Vec3, half: &Vec3) -> f64 {
    let q = (p - center).abs() - half;
    let outside = q.sup(&Vec3::zeros()).norm();
    outside + q.max().min(0.0)
}

/// Torus around the z axis.
pub fn torus_sdf(p: &Vec3, major: f64, minor: f64) -> f64 {
    let ring = sqrt(p.x * p.x + p.y * p.y) - major;
    sqrt(ring * ring + p.z * p.z) - minor
}

const COMPOSITE_SPHERE: ([f64; 3], f64) = ([-0.18, 0.05, 0.0], 0.2);
const COMPOSITE_BOX: ([f64; 3], f64) = ([0.2, -0.05, 0.05], 0.13);

pub fn composite_sdf(p: &Vec3) -> f64 {
    let s = sphere_sdf(p, &Vec3::from(COMPOSITE_SPHERE.0), COMPOSITE_SPHERE.1);
    let b = box_sdf(p, &Vec3::from(COMPOSITE_BOX.0), &Vec3::repeat(COMPOSITE_BOX.1));
    s.min(b)
}

/// A sphere and a box, disjoint; no rotational symmetry.
pub fn composite_mesh() -> TriMesh {
    let mut sphere = icosphere(COMPOSITE_SPHERE.1, 3);
    for v in &mut sphere.vertices {
        *v += Vec3::from(COMPOSITE_SPHERE.0);
    }
    let mut cube = cube_mesh(COMPOSITE_BOX.1, 4);
    for v in &mut cube.vertices {
        *v += Vec3::from(COMPOSITE_BOX.0);
    }
    merge(&[sphere, cube])
}

/// Concatenates meshes (geometry only).
pub fn merge(parts: &[TriMesh]) -> TriMesh {
    let mut out = TriMesh::default();
    for m in parts {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&m.vertices);
        out.faces.extend(m.faces.iter().map(|f| f.map(|i| i + base)));
    }
    out
}

/// Subdivided icosahedron projected to a sphere, outward winding.
/// Icosphere with i.i.d. Gaussian vertex noise of standard deviation
/// `sigma_rel * radius`, returned with the exact radial normals of the
/// unperturbed vertices.
pub fn noisy_icosphere(radius: f64, subdivisions: u32, sigma_rel: f64, seed: u64) -> (TriMesh, Vec<Vec3>) {
    let mut m = icosphere(radius, subdivisions);
    let targets: Vec<Vec3> = m.vertices.iter().map(|v| v.normalize()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = sigma_rel * radius;
    for v in &mut m.vertices {
        for k in 0..3 {
            let u1 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            v[k] += sigma * sqrt(-2.0 * log(u1)) * cos(core::f64::consts::TAU * u2);
        }
    }
    (m, targets)
}

pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + sqrt(5.0)) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = alloc::vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut mid = |a: u32, b: u32, vs: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                vs.push(((vs[a as usize] + vs[b as usize]) * 0.5).normalize());
                (vs.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriMesh::new(vertices, faces)
}

/// Axis-aligned cube with each face split into an `n` x `n` quad grid.
pub fn cube_mesh(half: f64, n: usize) -> TriMesh {
    let n = n.max(1);
    let side = n + 1;
    let mut index = alloc::vec![u32::MAX; side * side * side];
    let mut vertices = Vec::new();
    let mut id = |i: usize, j: usize, k: usize, vs: &mut Vec<Vec3>| -> u32 {
        let slot = &mut index[i + side * (j + side * k)];
        if *slot == u32::MAX {
            let h = |x: usize| -half + 2.0 * half * x as f64 / n as f64;
            vs.push(Vec3::new(h(i), h(j), h(k)));
            *slot = (vs.len() - 1) as u32;
        }
        *slot
    };
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
        for side_max in [false, true] {
            for u in 0..n {
                for v in 0..n {
                    let mut corner = |du: usize, dv: usize, vs: &mut Vec<Vec3>| {
                        let mut c = [0usize; 3];
                        c[axis] = if side_max { n } else { 0 };
                        c[ua] = u + du;
                        c[va] = v + dv;
                        id(c[0], c[1], c[2], vs)
                    };
                    let q = [
                        corner(0, 0, &mut vertices),
                        corner(1, 0, &mut vertices),
                        corner(1, 1, &mut vertices),
                        corner(0, 1, &mut vertices),
                    ];
                    if side_max {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    TriMesh::new(vertices, faces)
}

/// Torus around the z axis with `nu` segments around the ring and `nv`
/// around the tube.
pub fn torus_mesh(major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = core::f64::consts::TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let v = core::f64::consts::TAU * j as f64 / nv as f64;
            let r = major + minor * cos(v);
            vertices.push(Vec3::new(r * cos(u), r * sin(u), minor * sin(v)));
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let q = [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)];
            faces.push([q[0], q[1], q[2]]);
            faces.push([q[0], q[2], q[3]]);
        }
    }
    TriMesh::new(vertices, faces)
}

/// Flat `n` x `n` quad grid of the given size in the z = 0 plane, normal +z.
pub fn plane_grid(size: f64, n: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec3::new(size * (i as f64 / n as f64 - 0.5), size * (j as f64 / n as f64 - 0.5), 0.0));
        }
    }
    let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces)
}
