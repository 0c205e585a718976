//! End-to-end reconstruction from posed views.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use voxelmesh_core::backbone::{
    encode_views, prepare_views, query_heads, sparsevoxelformer_forward, voxelformer_forward, ArchConfig, Executor, WeightStore,
    SPARSE_VOXELFORMER,
};
use voxelmesh_core::enhance::{enhance_geometry, normal_consistency};
use voxelmesh_core::math::sigmoid;
use voxelmesh_core::meshing::extract_mesh;
use voxelmesh_core::render::{rasterize, total_loss, LossBreakdown};
use voxelmesh_core::volume::{occupancy_from_sdf, subdivide_occupied, DenseVolume, GridSpec, SparseVoxelGrid};
use voxelmesh_core::{TriMesh, ViewSet};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::formats::{mesh as mesh_io, rig, volume as volume_io, weights as weights_io};

/// SDF value given to extraction-grid points that no sparse site covers.
pub const ABSENT_SDF: f64 = 1.0;

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

/// Wall-clock per stage. The stages tile the run: each one starts where the
/// previous ended.
#[derive(Debug)]
pub struct Stopwatch {
    start: Instant,
    last: Instant,
    pub stages: Vec<StageTiming>,
}

impl Default for Stopwatch {
    fn default() -> Self {
        Self::new()
    }
}

impl Stopwatch {
    pub fn new() -> Self {
        let now = Instant::now();
        Self { start: now, last: now, stages: Vec::new() }
    }

    pub fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.stages.push(StageTiming { stage, seconds: (now - self.last).as_secs_f64() });
        self.last = now;
    }

    pub fn total(&self) -> f64 {
        (self.last - self.start).as_secs_f64()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub loss: LossBreakdown,
    /// False when no ground-truth SDF was supplied; the occupancy and SDF
    /// terms are then zero.
    pub volume_terms_supervised: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Textured mesh before enhancement.
    pub checkpoint: TriMesh,
    /// Final mesh; equal to the checkpoint when enhancement is skipped.
    pub mesh: TriMesh,
    pub occupied_coarse: usize,
    pub sparse_sites: usize,
    pub loss: LossReport,
    /// Fraction of vertices within 10° of their target normal, before and
    /// after enhancement.
    pub consistency_10deg: Option<(f64, f64)>,
    pub enhance_iterations: usize,
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> Error {
    move |e| Error::input(name, e)
}

/// Coarse occupancy probabilities from the dense logits.
fn probabilities(logits: &DenseVolume) -> DenseVolume {
    DenseVolume { spec: logits.spec, channels: 1, values: logits.values.iter().map(|v| sigmoid(*v)).collect() }
}

/// SDF over the fine corner lattice: head output at every sparse site,
/// [`ABSENT_SDF`] elsewhere.
pub fn lattice_sdf(grid: &SparseVoxelGrid, ws: &WeightStore, exec: &dyn Executor) -> Result<DenseVolume> {
    let spec = grid.spec.corner_aligned();
    let n = grid.len();
    let site_sdf = exec.map(n, 1, &|i| vec![query_heads(ws, grid.feature(i)).map(|h| h.sdf).unwrap_or(f64::NAN)]);
    if site_sdf.iter().any(|v| !v.is_finite()) {
        // Re-run one site sequentially for a proper error.
        for i in 0..n {
            query_heads(ws, grid.feature(i)).map_err(stage("heads"))?;
        }
        return Err(Error::numeric("heads", "non-finite SDF"));
    }
    let mut values = vec![ABSENT_SDF; spec.voxel_count()];
    for (c, v) in grid.coords.iter().zip(site_sdf) {
        values[spec.index(c[0] as usize, c[1] as usize, c[2] as usize)] = v;
    }
    DenseVolume::scalar(spec, values).map_err(stage("heads"))
}

/// Color and normal textures from the heads at trilinearly sampled
/// features. Vanishing normal outputs fall back to the geometric normal.
pub fn texture(mesh: &TriMesh, grid: &SparseVoxelGrid, ws: &WeightStore, exec: &dyn Executor) -> Result<TriMesh> {
    let geometric = mesh.vertex_normals().normals;
    let rows = exec.map(mesh.vertices.len(), 6, &|i| {
        let out = grid.sample(&mesh.vertices[i]).ok().and_then(|s| query_heads(ws, &s.values).ok());
        match out {
            Some(h) => {
                let n = if h.normal == voxelmesh_core::math::Vec3::zeros() { geometric[i] } else { h.normal };
                vec![h.color.x, h.color.y, h.color.z, n.x, n.y, n.z]
            }
            None => vec![f64::NAN; 6],
        }
    });
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("texture", "head query failed at a mesh vertex"));
    }
    let mut out = mesh.clone();
    out.colors = Some(rows.chunks_exact(6).map(|r| voxelmesh_core::math::Vec3::new(r[0], r[1], r[2])).collect());
    out.normals = Some(
        rows.chunks_exact(6)
            .zip(&geometric)
            .map(|(r, g)| {
                let n = voxelmesh_core::math::Vec3::new(r[3], r[4], r[5]);
                n.try_normalize(1e-12).or_else(|| g.try_normalize(1e-12)).unwrap_or_else(voxelmesh_core::math::Vec3::z)
            })
            .collect(),
    );
    Ok(out)
}

/// Runs every stage on in-memory inputs. `gt_sdf` enables the volume loss
/// terms and, with `occupancy.from_gt_sdf`, replaces the dense occupancy.
pub fn run(
    cfg: &PipelineConfig,
    arch: &ArchConfig,
    views: &ViewSet,
    ws: &WeightStore,
    gt_sdf: Option<&DenseVolume>,
    exec: &dyn Executor,
    clock: &mut Stopwatch,
) -> Result<PipelineOutput> {
    ws.validate(arch).map_err(stage("weights"))?;
    let bounds = cfg.bounds();

    let features = encode_views(views, arch, ws).map_err(stage("encode"))?;
    let prepared = prepare_views(views, &features).map_err(stage("encode"))?;
    clock.lap("encode");

    let logits = voxelformer_forward(arch, ws, &prepared, &bounds, exec).map_err(stage("voxelformer"))?;
    if !logits.is_finite() {
        return Err(Error::numeric("voxelformer", "non-finite occupancy logits"));
    }
    let probs = probabilities(&logits);
    clock.lap("voxelformer");

    let coarse_spec = logits.spec;
    let gt_occ = match gt_sdf {
        Some(sdf) => {
            let resampled = sdf.resample(coarse_spec).map_err(stage("occupancy"))?;
            let band = cfg.occupancy.band_voxels * coarse_spec.min_voxel_size();
            Some(occupancy_from_sdf(&resampled, band).map_err(stage("occupancy"))?)
        }
        None => None,
    };
    let occ = if cfg.occupancy.from_gt_sdf {
        gt_occ.clone().ok_or_else(|| Error::Usage("occupancy from ground truth needs a ground-truth SDF (--gt-sdf)".into()))?
    } else {
        let t = cfg.occupancy.threshold;
        DenseVolume { spec: coarse_spec, channels: 1, values: probs.values.iter().map(|p| if *p > t { 1.0 } else { 0.0 }).collect() }
    };
    let occupied_coarse = occ.count_nonzero();
    if occupied_coarse == 0 {
        return Err(Error::numeric("occupancy", "no coarse voxel is occupied"));
    }
    clock.lap("occupancy");

    let token = ws.get(&format!("{SPARSE_VOXELFORMER}.input_token")).map_err(stage("subdivide"))?;
    let sparse_in = subdivide_occupied(&occ, arch.sparse_factor(), &token.data).map_err(stage("subdivide"))?;
    clock.lap("subdivide");

    let grid = sparsevoxelformer_forward(arch, ws, &prepared, &sparse_in, exec).map_err(stage("sparsevoxelformer"))?;
    if grid.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("sparsevoxelformer", "non-finite features"));
    }
    clock.lap("sparsevoxelformer");

    let sdf = lattice_sdf(&grid, ws, exec)?;
    clock.lap("heads");

    let raw = extract_mesh(&sdf, 0.0).map_err(stage("extract"))?;
    if raw.faces.is_empty() {
        return Err(Error::numeric("extract", "predicted SDF has no zero crossing"));
    }
    clock.lap("extract");

    let checkpoint = texture(&raw, &grid, ws, exec)?;
    clock.lap("texture");

    let (mesh, consistency_10deg, enhance_iterations) = if cfg.skip_enhance {
        (checkpoint.clone(), None, 0)
    } else {
        let targets = checkpoint.normals.clone().expect("textured mesh has normals");
        let result = enhance_geometry(&checkpoint, &targets, &cfg.enhance).map_err(stage("enhance"))?;
        let frac = |m: &TriMesh| {
            let c = normal_consistency(m, &targets).ok()?;
            c.thresholds_deg.iter().position(|t| *t == 10.0).map(|i| c.fractions[i])
        };
        let consistency = frac(&checkpoint).zip(frac(&result.mesh));
        (result.mesh, consistency, result.energies.len() - 1)
    };
    clock.lap("enhance");

    let rendered = views
        .views
        .iter()
        .map(|v| rasterize(&mesh, &v.camera))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(stage("loss"))?;
    let loss = match (gt_sdf, gt_occ) {
        (Some(gt), Some(gt_occ)) => {
            let gt_fine = gt.resample(sdf.spec).map_err(stage("loss"))?;
            let b = total_loss(&rendered, &views.views, &probs, &gt_occ, &sdf, &gt_fine, &cfg.loss).map_err(stage("loss"))?;
            LossReport { loss: b, volume_terms_supervised: true }
        }
        _ => {
            let b = total_loss(&rendered, &views.views, &probs, &probs, &sdf, &sdf, &cfg.loss).map_err(stage("loss"))?;
            LossReport { loss: b, volume_terms_supervised: false }
        }
    };
    clock.lap("loss");

    Ok(PipelineOutput { checkpoint, mesh, occupied_coarse, sparse_sites: grid.len(), loss, consistency_10deg, enhance_iterations })
}

/// File-level inputs of `reconstruct`.
#[derive(Debug, Clone)]
pub struct ReconstructJob {
    pub views_dir: PathBuf,
    pub gt_sdf: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub arch: String,
    pub arch_hash: String,
    pub seed: u64,
    pub weights: String,
    pub occupied_coarse_voxels: usize,
    pub sparse_sites: usize,
    pub vertices: usize,
    pub faces: usize,
    pub enhance_iterations: usize,
    pub consistency_10deg: Option<(f64, f64)>,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

/// Sibling path `<stem><suffix>` of the output mesh.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("obj");
    sibling(out, &format!(".pre_enhance.{ext}"))
}

pub fn loss_path(out: &Path) -> PathBuf {
    sibling(out, ".loss.json")
}

pub fn provenance_path(out: &Path) -> PathBuf {
    sibling(out, ".provenance.json")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    crate::formats::save_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::from)?;
        std::io::Write::write_all(w, b"\n")
    })
}

/// Loads inputs, runs the pipeline and writes the mesh, the pre-enhancement
/// checkpoint (unless enhancement is skipped), the loss report and the
/// provenance record.
pub fn reconstruct(cfg: &PipelineConfig, job: &ReconstructJob, exec: &dyn Executor) -> Result<Provenance> {
    let mut clock = Stopwatch::new();
    cfg.validate()?;
    let arch = cfg.arch_config()?;
    let views = rig::load_views(&job.views_dir)?;
    let (ws, weights) = match &cfg.weights {
        Some(p) => (weights_io::load_weights(p)?, p.display().to_string()),
        None => (WeightStore::seeded(&arch, cfg.seed).map_err(stage("weights"))?, format!("seeded:{}", cfg.seed)),
    };
    let gt = job.gt_sdf.as_deref().map(volume_io::load_dense).transpose()?;
    clock.lap("load");

    let out = run(cfg, &arch, &views, &ws, gt.as_ref(), exec, &mut clock)?;

    mesh_io::save_mesh(&job.out, &out.mesh)?;
    if !cfg.skip_enhance {
        mesh_io::save_mesh(&checkpoint_path(&job.out), &out.checkpoint)?;
    }
    write_json(&loss_path(&job.out), &out.loss)?;
    clock.lap("write");

    let prov = Provenance {
        config_hash: format!("{:016x}", cfg.hash()),
        arch: arch.name.clone(),
        arch_hash: format!("{:016x}", voxelmesh_core::backbone::config_hash(&arch)),
        seed: cfg.seed,
        weights,
        occupied_coarse_voxels: out.occupied_coarse,
        sparse_sites: out.sparse_sites,
        vertices: out.mesh.vertices.len(),
        faces: out.mesh.faces.len(),
        enhance_iterations: out.enhance_iterations,
        consistency_10deg: out.consistency_10deg,
        total_seconds: clock.total(),
        stages: clock.stages,
    };
    write_json(&provenance_path(&job.out), &prov)?;
    Ok(prov)
}

/// Ground-truth SDF of a closed mesh on the configured cube.
pub fn sdf_volume(mesh: &TriMesh, cfg: &PipelineConfig, resolution: usize) -> Result<DenseVolume> {
    let spec = GridSpec::cubic(resolution, cfg.bounds()).map_err(stage("sdf"))?;
    crate::parallel::mesh_to_sdf(mesh, &spec).map_err(stage("sdf"))
}
