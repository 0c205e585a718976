//! Mesh evaluation: similarity alignment, Chamfer distance, F-score and
//! image PSNR.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SVD};
use thiserror::Error;

use crate::camera::{Camera, Image};
use crate::math::{cbrt, floor, log10, sqrt, Mat3, Vec3};
use crate::mesh::{MeshError, Similarity, TriMesh};
use crate::render::{rasterize, RenderError};
use crate::volume::Aabb;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("point set is empty")]
    EmptyPoints,
    #[error("{which} mesh is degenerate (extent {extent})")]
    Degenerate { which: &'static str, extent: f64 },
    #[error("sampling {which} mesh: {source}")]
    Sampling { which: &'static str, source: MeshError },
    #[error("rendering {which} mesh: {source}")]
    Render { which: &'static str, source: RenderError },
    #[error("image shapes differ")]
    ShapeMismatch,
}

pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_POINTS: usize = 100_000;
pub const DEFAULT_PSNR_CAP: f64 = 99.0;

/// Exact nearest-neighbour queries over a uniform grid of buckets.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    min: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    ids: Vec<u32>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Result<Self, EvalError> {
        let bounds = Aabb::from_points(points).ok_or(EvalError::EmptyPoints)?;
        let ext = bounds.extent();
        let longest = bounds.max_extent().max(1e-12);
        // About two points per occupied cell, at most 256 cells per axis.
        let volume = ext.iter().map(|e| e.max(longest * 1e-3)).product::<f64>();
        let cell = cbrt(2.0 * volume / points.len() as f64).max(longest / 256.0);
        let dims = [0, 1, 2].map(|k| (floor(ext[k] / cell) as usize + 1).min(257));
        let mut index = Self { points: points.to_vec(), min: bounds.min, cell, dims, starts: Vec::new(), ids: Vec::new() };
        let ncells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = points.iter().map(|p| index.flat(index.cell_coords(p))).collect();
        let mut counts = alloc::vec![0u32; ncells + 1];
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut ids = alloc::vec![0u32; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            ids[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index.starts = counts;
        index.ids = ids;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn raw_coords(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| floor((p[k] - self.min[k]) / self.cell) as i64)
    }

    fn cell_coords(&self, p: &Vec3) -> [usize; 3] {
        let r = self.raw_coords(p);
        [0, 1, 2].map(|k| r[k].clamp(0, self.dims[k] as i64 - 1) as usize)
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Index of the nearest point and its distance. Ties go to the lower
    /// index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let qc = self.raw_coords(q);
        let dims = self.dims.map(|d| d as i64);
        // Distance from q to the walls of its (virtual) cell.
        let mut wall = f64::INFINITY;
        for k in 0..3 {
            let lo = q[k] - (self.min[k] + qc[k] as f64 * self.cell);
            wall = wall.min(lo).min(self.cell - lo);
        }
        let wall = wall.max(0.0);
        let outside = (0..3).map(|k| (-qc[k]).max(qc[k] - (dims[k] - 1)).max(0)).max().unwrap();
        let reach = (0..3).map(|k| (qc[k]).abs().max((qc[k] - (dims[k] - 1)).abs())).max().unwrap();
        let mut best = (usize::MAX, f64::INFINITY);
        let mut r = outside;
        loop {
            let lo = [0, 1, 2].map(|k| (qc[k] - r).max(0));
            let hi = [0, 1, 2].map(|k| (qc[k] + r).min(dims[k] - 1));
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let ring = (i - qc[0]).abs().max((j - qc[1]).abs()).max((k - qc[2]).abs());
                        if ring != r {
                            continue;
                        }
                        let c = self.flat([i as usize, j as usize, k as usize]);
                        for &id in &self.ids[self.starts[c] as usize..self.starts[c + 1] as usize] {
                            let d = (self.points[id as usize] - q).norm_squared();
                            if d < best.1 || (d == best.1 && (id as usize) < best.0) {
                                best = (id as usize, d);
                            }
                        }
                    }
                }
            }
            // Every cell in ring r + 1 is at least r * cell + wall away.
            let bound = r as f64 * self.cell + wall;
            if (best.0 != usize::MAX && best.1 < bound * bound) || r >= reach {
                break;
            }
            r += 1;
        }
        (best.0, sqrt(best.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferFscore {
    pub chamfer: f64,
    pub fscore: f64,
    /// Fraction of `a` within the threshold of `b`.
    pub precision: f64,
    /// Fraction of `b` within the threshold of `a`.
    pub recall: f64,
}

fn fscore(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Chamfer distance (mean of the two directional mean nearest-neighbour
/// distances) and F-score at `threshold` (strict `<`).
pub fn chamfer_fscore(a: &[Vec3], b: &[Vec3], threshold: f64) -> Result<ChamferFscore, EvalError> {
    let ia = PointIndex::new(a)?;
    let ib = PointIndex::new(b)?;
    Ok(chamfer_with_indices(a, &ib, b, &ia, threshold))
}

fn directional(points: &[Vec3], target: &PointIndex, threshold: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut hits = 0usize;
    for p in points {
        let d = target.nearest(p).1;
        sum += d;
        if d < threshold {
            hits += 1;
        }
    }
    (sum / points.len() as f64, hits as f64 / points.len() as f64)
}

fn chamfer_with_indices(a: &[Vec3], ib: &PointIndex, b: &[Vec3], ia: &PointIndex, threshold: f64) -> ChamferFscore {
    let (da, precision) = directional(a, ib, threshold);
    let (db, recall) = directional(b, ia, threshold);
    ChamferFscore { chamfer: 0.5 * (da + db), fscore: fscore(precision, recall), precision, recall }
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]`.
pub fn umeyama(src: &[Vec3], dst: &[Vec3]) -> Option<Similarity> {
    let n = src.len();
    if n == 0 || n != dst.len() {
        return None;
    }
    let inv = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv;
    let mu_d = dst.iter().sum::<Vec3>() * inv;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov *= inv;
    var_s *= inv;
    if !(var_s > 0.0) {
        return None;
    }
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut sign = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * sign[(i, i)]).sum();
    let scale = trace / var_s;
    if !(scale > 0.0) {
        return None;
    }
    let translation = mu_d - rotation * mu_s * scale;
    Some(Similarity::new(scale, rotation, translation))
}

/// The 24 rotations of the cube, identity first.
pub fn octahedral_rotations() -> Vec<Mat3> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u32 {
            let mut m = Mat3::zeros();
            for r in 0..3 {
                m[(r, p[r])] = if signs & (1 << r) != 0 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignParams {
    /// Number of initial rotations taken from the octahedral group (1..=24).
    pub rotations: usize,
    pub scales: Vec<f64>,
    /// Inlier threshold as a fraction of the ground truth's largest extent.
    pub threshold: f64,
    /// Samples per mesh while screening initial poses.
    pub screen_samples: usize,
    pub screen_iterations: usize,
    /// Samples per mesh for the final refinement.
    pub refine_samples: usize,
    /// Screened candidates that get a full refinement.
    pub refine_candidates: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            rotations: 24,
            scales: alloc::vec![0.8, 0.9, 1.0, 1.1, 1.25],
            threshold: DEFAULT_THRESHOLD,
            screen_samples: 400,
            screen_iterations: 15,
            refine_samples: 2000,
            refine_candidates: 3,
            max_iterations: 100,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// Similarity taking the predicted mesh onto the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub transform: Similarity,
    /// F-score of the aligned samples at the inlier threshold.
    pub inlier_ratio: f64,
    pub rms: f64,
    pub iterations: usize,
}

struct IcpOutcome {
    transform: Similarity,
    inlier_ratio: f64,
    rms: f64,
    iterations: usize,
}

/// Symmetric point-to-point ICP with per-iteration scale estimation: both
/// directions' closest-point pairs feed one similarity fit.
fn icp(pred: &[Vec3], gt: &[Vec3], gt_index: &PointIndex, init: Similarity, max_iter: usize, tol: f64, threshold: f64) -> Result<IcpOutcome, EvalError> {
    let mut t = init;
    let mut prev_rms = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let moved: Vec<Vec3> = pred.iter().map(|p| t.apply(p)).collect();
        let moved_index = PointIndex::new(&moved)?;
        let mut src = Vec::with_capacity(pred.len() + gt.len());
        let mut dst = Vec::with_capacity(pred.len() + gt.len());
        let mut sq = 0.0;
        for (p, m) in pred.iter().zip(&moved) {
            let (j, d) = gt_index.nearest(m);
            src.push(*p);
            dst.push(gt[j]);
            sq += d * d;
        }
        for g in gt {
            let (j, d) = moved_index.nearest(g);
            src.push(pred[j]);
            dst.push(*g);
            sq += d * d;
        }
        let rms = sqrt(sq / src.len() as f64);
        match umeyama(&src, &dst) {
            Some(next) => t = next,
            None => break,
        }
        let converged = prev_rms.is_finite() && (prev_rms - rms).abs() <= tol * prev_rms.max(1e-300);
        prev_rms = rms;
        if converged || rms == 0.0 {
            break;
        }
    }
    let moved: Vec<Vec3> = pred.iter().map(|p| t.apply(p)).collect();
    let moved_index = PointIndex::new(&moved)?;
    let c = chamfer_with_indices(&moved, gt_index, gt, &moved_index, threshold);
    let rms_final = {
        let mut sq = 0.0;
        for m in &moved {
            let d = gt_index.nearest(m).1;
            sq += d * d;
        }
        for g in gt {
            let d = moved_index.nearest(g).1;
            sq += d * d;
        }
        sqrt(sq / (moved.len() + gt.len()) as f64)
    };
    Ok(IcpOutcome { transform: t, inlier_ratio: c.fscore, rms: rms_final, iterations })
}

fn better(a: &IcpOutcome, b: &IcpOutcome) -> bool {
    a.inlier_ratio > b.inlier_ratio || (a.inlier_ratio == b.inlier_ratio && a.rms < b.rms)
}

fn check_extent(mesh: &TriMesh, which: &'static str) -> Result<Aabb, EvalError> {
    let b = mesh.bounds().ok_or(EvalError::Degenerate { which, extent: 0.0 })?;
    let extent = b.max_extent();
    if !(extent > 1e-9) {
        return Err(EvalError::Degenerate { which, extent });
    }
    Ok(b)
}

/// Best-of-grid initialization (octahedral rotations × scales about the
/// centroids) followed by ICP. The best pose maximizes the inlier ratio,
/// ties broken by lower RMS; the identity rotation at scale 1 is tried
/// first.
pub fn align(pred: &TriMesh, gt: &TriMesh, params: &AlignParams) -> Result<AlignmentResult, EvalError> {
    check_extent(pred, "predicted")?;
    let gt_bounds = check_extent(gt, "ground truth")?;
    let threshold = params.threshold * gt_bounds.max_extent();
    let sample = |m: &TriMesh, n: usize, which: &'static str| m.sample_surface(n, params.seed).map_err(|source| EvalError::Sampling { which, source });

    let screen_pred = sample(pred, params.screen_samples, "predicted")?;
    let screen_gt = sample(gt, params.screen_samples, "ground truth")?;
    let screen_index = PointIndex::new(&screen_gt)?;
    let cp = screen_pred.iter().sum::<Vec3>() / screen_pred.len() as f64;
    let cg = screen_gt.iter().sum::<Vec3>() / screen_gt.len() as f64;

    let mut scales = params.scales.clone();
    if scales.is_empty() {
        scales.push(1.0);
    }
    // Scale 1 first so the identity pose leads the candidate list.
    scales.sort_by(|a, b| ((a - 1.0).abs()).total_cmp(&(b - 1.0).abs()));
    let rotations: Vec<Mat3> = octahedral_rotations().into_iter().take(params.rotations.clamp(1, 24)).collect();
    let mut screened: Vec<(usize, IcpOutcome)> = Vec::new();
    for &s in &scales {
        for r in &rotations {
            let init = Similarity::new(s, *r, cg - r * cp * s);
            let out = icp(&screen_pred, &screen_gt, &screen_index, init, params.screen_iterations, params.tolerance, threshold)?;
            screened.push((screened.len(), out));
        }
    }
    screened.sort_by(|(ia, a), (ib, b)| {
        if better(a, b) {
            core::cmp::Ordering::Less
        } else if better(b, a) {
            core::cmp::Ordering::Greater
        } else {
            ia.cmp(ib)
        }
    });

    let refine_pred = sample(pred, params.refine_samples, "predicted")?;
    let refine_gt = sample(gt, params.refine_samples, "ground truth")?;
    let refine_index = PointIndex::new(&refine_gt)?;
    let mut best: Option<IcpOutcome> = None;
    for (_, cand) in screened.iter().take(params.refine_candidates.max(1)) {
        let out = icp(&refine_pred, &refine_gt, &refine_index, cand.transform, params.max_iterations, params.tolerance, threshold)?;
        if best.as_ref().is_none_or(|b| better(&out, b)) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one candidate");
    Ok(AlignmentResult { transform: best.transform, inlier_ratio: best.inlier_ratio, rms: best.rms, iterations: best.iterations })
}

/// `10 log10(1 / MSE)` for images in [0, 1], capped.
pub fn psnr(a: &Image, b: &Image, cap_db: f64) -> Result<f64, EvalError> {
    if !a.same_shape(b) {
        return Err(EvalError::ShapeMismatch);
    }
    if a.data.is_empty() {
        return Ok(cap_db);
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(cap_db);
    }
    Ok((10.0 * log10(1.0 / mse)).min(cap_db))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub points: usize,
    pub threshold: f64,
    pub seed: u64,
    pub psnr_cap: f64,
    pub align: AlignParams,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { points: DEFAULT_POINTS, threshold: DEFAULT_THRESHOLD, seed: 0, psnr_cap: DEFAULT_PSNR_CAP, align: AlignParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub chamfer: f64,
    pub psnr_color: f64,
    pub psnr_normal: f64,
    pub alignment: AlignmentResult,
    pub points: usize,
    pub threshold: f64,
}

/// Fills missing textures: gray color, geometric normals.
pub fn with_default_textures(mesh: &TriMesh) -> TriMesh {
    let mut out = mesh.clone();
    if out.colors.is_none() {
        out.colors = Some(alloc::vec![Vec3::repeat(0.5); out.vertices.len()]);
    }
    if out.normals.is_none() {
        out.normals = Some(out.vertex_normals().normals);
    }
    out
}

/// Normal image mapped to [0, 1] as `(n + 1) / 2` under the mask, zero
/// elsewhere.
pub fn encode_normals(normal: &Image, mask: &[bool]) -> Image {
    let mut out = Image::new(normal.width, normal.height, 3);
    for (p, &m) in mask.iter().enumerate() {
        if m {
            for k in 0..3 {
                out.data[p * 3 + k] = (normal.data[p * 3 + k] + 1.0) * 0.5;
            }
        }
    }
    out
}

/// Aligns `pred` onto `gt`, maps both with the ground truth's unit-box
/// normalization, then measures Chamfer/F-score on surface samples and
/// per-view PSNR averaged over `cameras`.
pub fn evaluate(pred: &TriMesh, gt: &TriMesh, cameras: &[Camera], params: &EvalParams) -> Result<EvalReport, EvalError> {
    let alignment = align(pred, gt, &AlignParams { threshold: params.threshold, seed: params.seed, ..params.align.clone() })?;
    let unit = gt.unit_box_transform().map_err(|source| EvalError::Sampling { which: "ground truth", source })?;
    let pred_n = with_default_textures(pred).transformed(&unit.compose(&alignment.transform));
    let gt_n = with_default_textures(gt).transformed(&unit);
    let pa = pred_n.sample_surface(params.points, params.seed).map_err(|source| EvalError::Sampling { which: "predicted", source })?;
    let pb = gt_n.sample_surface(params.points, params.seed).map_err(|source| EvalError::Sampling { which: "ground truth", source })?;
    let c = chamfer_fscore(&pa, &pb, params.threshold)?;

    let mut psnr_color = 0.0;
    let mut psnr_normal = 0.0;
    for cam in cameras {
        let rp = rasterize(&pred_n, cam).map_err(|source| EvalError::Render { which: "predicted", source })?;
        let rg = rasterize(&gt_n, cam).map_err(|source| EvalError::Render { which: "ground truth", source })?;
        psnr_color += psnr(&rp.rgb, &rg.rgb, params.psnr_cap)?;
        psnr_normal += psnr(&encode_normals(&rp.normal, &rp.mask), &encode_normals(&rg.normal, &rg.mask), params.psnr_cap)?;
    }
    if !cameras.is_empty() {
        psnr_color /= cameras.len() as f64;
        psnr_normal /= cameras.len() as f64;
    } else {
        psnr_color = params.psnr_cap;
        psnr_normal = params.psnr_cap;
    }
    Ok(EvalReport {
        fscore: c.fscore,
        precision: c.precision,
        recall: c.recall,
        chamfer: c.chamfer,
        psnr_color,
        psnr_normal,
        alignment,
        points: params.points,
        threshold: params.threshold,
    })
}
