//! Indexed triangle meshes and the geometric utilities used around them.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::math::{sqrt, try_normalize, Mat3, Vec3};
use crate::volume::Aabb;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh has no faces")]
    Empty,
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("{what} has {got} entries but the mesh has {expected} vertices")]
    AttributeCount { what: &'static str, got: usize, expected: usize },
    #[error("mesh surface area is zero")]
    ZeroArea,
    #[error("mesh extent is degenerate ({extent:e})")]
    DegenerateExtent { extent: f64 },
}

/// Triangle mesh with optional per-vertex color and normal textures.
///
/// The normal texture is a learned or prescribed field, distinct from the
/// normals implied by the geometry (see [`TriMesh::vertex_normals`]).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<Vec3>>,
    pub normals: Option<Vec<Vec3>>,
}

/// Area-weighted geometric normals; isolated vertices get a zero normal and
/// are listed in `isolated`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    pub isolated: Vec<usize>,
}

/// `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Self {
        Self { scale, rotation, translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let s = 1.0 / self.scale;
        Self { scale: s, rotation: rt, translation: -(rt * self.translation) * s }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Similarity) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces, colors: None, normals: None }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(MeshError::IndexOutOfRange { face: fi, index: i, count: n });
                }
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(MeshError::AttributeCount { what: "color texture", got: c.len(), expected: n });
            }
        }
        if let Some(c) = &self.normals {
            if c.len() != n {
                return Err(MeshError::AttributeCount { what: "normal texture", got: c.len(), expected: n });
            }
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn vertex_normals(&self) -> VertexNormals {
        let mut acc = alloc::vec![Vec3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_cross(fi);
            for &i in f {
                acc[i as usize] += n;
            }
        }
        let mut isolated = Vec::new();
        let normals = acc
            .iter()
            .enumerate()
            .map(|(i, n)| match try_normalize(n) {
                Some(u) => u,
                None => {
                    isolated.push(i);
                    Vec3::zeros()
                }
            })
            .collect();
        VertexNormals { normals, isolated }
    }

    /// Same mesh with every face winding reversed.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for f in &mut out.faces {
            f.swap(1, 2);
        }
        out
    }

    /// Applies `t` to positions and rotates the normal texture.
    pub fn transformed(&self, t: &Similarity) -> Self {
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = t.apply(v);
        }
        if let Some(ns) = &mut out.normals {
            for n in ns.iter_mut() {
                *n = t.apply_vector(n);
            }
        }
        out
    }

    /// Sorted undirected edges with their face incidence counts.
    pub fn edge_incidence(&self) -> Vec<((u32, u32), usize)> {
        let mut edges: Vec<(u32, u32)> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        let mut out: Vec<((u32, u32), usize)> = Vec::new();
        for e in edges {
            match out.last_mut() {
                Some((last, count)) if *last == e => *count += 1,
                _ => out.push((e, 1)),
            }
        }
        out
    }

    /// Edges not shared by exactly two faces.
    pub fn open_edge_count(&self) -> usize {
        self.edge_incidence().iter().filter(|(_, c)| *c != 2).count()
    }

    pub fn is_closed_manifold(&self) -> bool {
        !self.faces.is_empty() && self.open_edge_count() == 0
    }

    /// V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = alloc::vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        let e = self.edge_incidence().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Drops vertices no face references, remapping indices and attributes.
    pub fn compact(&mut self) {
        let mut remap = alloc::vec![u32::MAX; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                remap[i as usize] = 0;
            }
        }
        let mut next = 0u32;
        for r in remap.iter_mut().filter(|r| **r == 0) {
            *r = next;
            next += 1;
        }
        let keep = |v: &[Vec3]| {
            let mut out = alloc::vec![Vec3::zeros(); next as usize];
            for (i, r) in remap.iter().enumerate() {
                if *r != u32::MAX {
                    out[*r as usize] = v[i];
                }
            }
            out
        };
        self.vertices = keep(&self.vertices);
        if let Some(c) = &self.colors {
            self.colors = Some(keep(c));
        }
        if let Some(n) = &self.normals {
            self.normals = Some(keep(n));
        }
        for f in &mut self.faces {
            for i in f.iter_mut() {
                *i = remap[*i as usize];
            }
        }
    }

    /// Uniform area-weighted surface samples together with their source faces.
    pub fn sample_surface_with_faces(&self, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<u32>), MeshError> {
        if self.faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(MeshError::ZeroArea);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        let mut faces = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|c| *c <= r).min(self.faces.len() - 1);
            let [a, b, c] = self.triangle(f);
            let s = sqrt(rng.random::<f64>());
            let t = rng.random::<f64>();
            points.push(a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t));
            faces.push(f as u32);
        }
        Ok((points, faces))
    }

    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<Vec3>, MeshError> {
        self.sample_surface_with_faces(n, seed).map(|(p, _)| p)
    }

    /// Centers the bounding box at the origin with a max extent of 1.
    /// Returns the normalized mesh and the transform that produced it.
    pub fn normalize_unit_box(&self) -> Result<(TriMesh, Similarity), MeshError> {
        let t = self.unit_box_transform()?;
        Ok((self.transformed(&t), t))
    }

    pub fn unit_box_transform(&self) -> Result<Similarity, MeshError> {
        let b = self.bounds().ok_or(MeshError::Empty)?;
        let extent = b.max_extent();
        if !(extent > 1e-12) {
            return Err(MeshError::DegenerateExtent { extent });
        }
        let s = 1.0 / extent;
        Ok(Similarity::new(s, Mat3::identity(), -b.center() * s))
    }
}
