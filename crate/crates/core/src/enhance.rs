//! Normal-driven vertex refinement and normal-consistency statistics.
//!
//! Vertices minimize
//! `E = alpha * sum |v - v0|^2 + beta * sum_faces sum_edges (nbar_f . e)^2`,
//! where `nbar_f` is the normalized mean of the target normals at the
//! face's corners. The second term asks every edge to be orthogonal to the
//! target normal field.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{angle_deg, try_normalize, Vec3};
use crate::mesh::{MeshError, TriMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnhanceError {
    #[error("{normals} target normals for {vertices} vertices")]
    CountMismatch { normals: usize, vertices: usize },
    #[error("target normal {0} is not unit length")]
    NotUnit(usize),
    #[error("invalid enhancement parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceParams {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub step: f64,
    pub max_displacement: Option<f64>,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 4.0, iterations: 50, step: 0.01, max_displacement: None }
    }
}

impl EnhanceParams {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(EnhanceError::InvalidParams("alpha and beta must be finite and non-negative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(EnhanceError::InvalidParams("alpha and beta cannot both be zero"));
        }
        if self.iterations == 0 {
            return Err(EnhanceError::InvalidParams("iterations must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(EnhanceError::InvalidParams("step must be positive"));
        }
        if self.max_displacement.is_some_and(|d| !(d >= 0.0)) {
            return Err(EnhanceError::InvalidParams("max displacement must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceResult {
    pub mesh: TriMesh,
    /// Energy at the start and after every accepted step.
    pub energies: Vec<f64>,
    /// Step-size halvings performed.
    pub rejections: usize,
}

fn check_targets(mesh: &TriMesh, targets: &[Vec3]) -> Result<(), EnhanceError> {
    if targets.len() != mesh.vertices.len() {
        return Err(EnhanceError::CountMismatch { normals: targets.len(), vertices: mesh.vertices.len() });
    }
    if let Some(i) = targets.iter().position(|n| !((n.norm() - 1.0).abs() <= 1e-3)) {
        return Err(EnhanceError::NotUnit(i));
    }
    Ok(())
}

struct Problem<'a> {
    faces: &'a [[u32; 3]],
    face_normals: Vec<Vec3>,
    rest: &'a [Vec3],
    alpha: f64,
    beta: f64,
}

impl Problem<'_> {
    fn energy(&self, v: &[Vec3]) -> f64 {
        let fidelity: f64 = v.iter().zip(self.rest).map(|(a, b)| (a - b).norm_squared()).sum();
        let mut align = 0.0;
        for (f, n) in self.faces.iter().zip(&self.face_normals) {
            for k in 0..3 {
                let e = v[f[(k + 1) % 3] as usize] - v[f[k] as usize];
                let d = n.dot(&e);
                align += d * d;
            }
        }
        self.alpha * fidelity + self.beta * align
    }

    fn gradient(&self, v: &[Vec3]) -> Vec<Vec3> {
        let mut g: Vec<Vec3> = v.iter().zip(self.rest).map(|(a, b)| (a - b) * (2.0 * self.alpha)).collect();
        for (f, n) in self.faces.iter().zip(&self.face_normals) {
            for k in 0..3 {
                let (i, j) = (f[k] as usize, f[(k + 1) % 3] as usize);
                let d = n * (2.0 * self.beta * n.dot(&(v[j] - v[i])));
                g[j] += d;
                g[i] -= d;
            }
        }
        g
    }
}

/// Energy of `mesh` relative to rest positions `rest` (exposed for tests
/// and diagnostics).
pub fn enhancement_energy(mesh: &TriMesh, rest: &[Vec3], targets: &[Vec3], params: &EnhanceParams) -> Result<f64, EnhanceError> {
    check_targets(mesh, targets)?;
    let problem = Problem { faces: &mesh.faces, face_normals: face_targets(mesh, targets), rest, alpha: params.alpha, beta: params.beta };
    Ok(problem.energy(&mesh.vertices))
}

fn face_targets(mesh: &TriMesh, targets: &[Vec3]) -> Vec<Vec3> {
    mesh.faces
        .iter()
        .map(|f| try_normalize(&(targets[f[0] as usize] + targets[f[1] as usize] + targets[f[2] as usize])).unwrap_or_else(Vec3::zeros))
        .collect()
}

/// Gradient descent with backtracking: a step that raises the energy is
/// retried at half the size; accepted energies never increase.
pub fn enhance_geometry(mesh: &TriMesh, targets: &[Vec3], params: &EnhanceParams) -> Result<EnhanceResult, EnhanceError> {
    params.validate()?;
    mesh.validate()?;
    check_targets(mesh, targets)?;
    let rest = mesh.vertices.clone();
    let problem = Problem { faces: &mesh.faces, face_normals: face_targets(mesh, targets), rest: &rest, alpha: params.alpha, beta: params.beta };
    let mut v = rest.clone();
    let mut e = problem.energy(&v);
    let mut energies = alloc::vec![e];
    let mut rejections = 0;
    let mut step = params.step;
    for _ in 0..params.iterations {
        let g = problem.gradient(&v);
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial: Vec<Vec3> = v.iter().zip(&g).map(|(p, d)| p - d * step).collect();
            if let Some(max) = params.max_displacement {
                for (p, r) in trial.iter_mut().zip(&rest) {
                    let d = *p - r;
                    let n = d.norm();
                    if n > max {
                        *p = r + d * (max / n);
                    }
                }
            }
            let te = problem.energy(&trial);
            if te <= e {
                debug_assert!(te <= *energies.last().unwrap());
                v = trial;
                e = te;
                energies.push(e);
                accepted = true;
                break;
            }
            step *= 0.5;
            rejections += 1;
        }
        if !accepted {
            break;
        }
    }
    let mut out = mesh.clone();
    out.vertices = v;
    Ok(EnhanceResult { mesh: out, energies, rejections })
}

pub const CONSISTENCY_THRESHOLDS_DEG: [f64; 5] = [1.0, 2.0, 5.0, 10.0, 15.0];

/// Fractions of vertices whose geometric normal is strictly within each
/// threshold of the target normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalConsistency {
    pub thresholds_deg: Vec<f64>,
    pub fractions: Vec<f64>,
    pub evaluated: usize,
    /// Vertices with a zero geometric normal, left out of the fractions.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalConsistencyReport {
    pub before: NormalConsistency,
    pub after: NormalConsistency,
}

pub fn normal_consistency(mesh: &TriMesh, targets: &[Vec3]) -> Result<NormalConsistency, EnhanceError> {
    if targets.len() != mesh.vertices.len() {
        return Err(EnhanceError::CountMismatch { normals: targets.len(), vertices: mesh.vertices.len() });
    }
    let geometric = mesh.vertex_normals();
    let mut counts = [0usize; 5];
    let mut evaluated = 0;
    let mut excluded = 0;
    for (n, t) in geometric.normals.iter().zip(targets) {
        if n.norm() == 0.0 {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let a = angle_deg(n, t);
        for (c, th) in counts.iter_mut().zip(CONSISTENCY_THRESHOLDS_DEG) {
            if a < th {
                *c += 1;
            }
        }
    }
    let fractions = counts.iter().map(|c| if evaluated == 0 { 0.0 } else { *c as f64 / evaluated as f64 }).collect();
    Ok(NormalConsistency { thresholds_deg: CONSISTENCY_THRESHOLDS_DEG.to_vec(), fractions, evaluated, excluded })
}

pub fn consistency_report(before: &TriMesh, after: &TriMesh, targets: &[Vec3]) -> Result<NormalConsistencyReport, EnhanceError> {
    Ok(NormalConsistencyReport { before: normal_consistency(before, targets)?, after: normal_consistency(after, targets)? })
}

/// Median angle in degrees between geometric and target normals over
/// vertices with a defined geometric normal.
pub fn median_angle_error(mesh: &TriMesh, targets: &[Vec3]) -> Option<f64> {
    let mut angles: Vec<f64> = mesh.vertex_normals().normals.iter().zip(targets).filter(|(n, _)| n.norm() > 0.0).map(|(n, t)| angle_deg(n, t)).collect();
    if angles.is_empty() {
        return None;
    }
    angles.sort_by(f64::total_cmp);
    Some(angles[angles.len() / 2])
}
