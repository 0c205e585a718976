//! Command-line surface. Values come from the defaults, then the `--config`
//! file, then flags; a flag always overrides the file.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use voxelmesh_core::backbone::{Executor, WeightStore};
use voxelmesh_core::camera::RingRig;
use voxelmesh_core::enhance::{consistency_report, enhance_geometry, NormalConsistencyReport};
use voxelmesh_core::eval::{evaluate, EvalReport};
use voxelmesh_core::math::Vec3;
use voxelmesh_core::meshing::extract_mesh;
use voxelmesh_core::render::render_views;
use voxelmesh_core::shapes::Shape;
use voxelmesh_core::Camera;

use crate::config::PipelineConfig;
use crate::error::{Error, IoContext, Result};
use crate::formats::image::{encode_normals, save_image};
use crate::formats::{mesh as mesh_io, rig, volume as volume_io, weights as weights_io};
use crate::pipeline::{self, write_json, ReconstructJob};

#[derive(Debug, Parser)]
#[command(name = "voxelmesh", version, about = "Sparse-view textured mesh reconstruction on voxel grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML (or .json) pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for weights, sampling and alignment.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic fixture: views, rig, ground-truth mesh and SDF.
    Fixtures(FixturesArgs),
    /// Reconstruct a textured mesh from a view directory.
    Reconstruct(ReconstructArgs),
    /// Write seeded weights for an architecture preset.
    Weights(WeightsArgs),
    /// Signed distance volume of a closed mesh.
    Sdf(SdfArgs),
    /// Extract the zero level set of an SDF volume.
    Extract(ExtractArgs),
    /// Move vertices so geometric normals follow target normals.
    Enhance(EnhanceArgs),
    /// Align and score predicted meshes against ground truth.
    Eval(EvalArgs),
    /// Render a mesh into a view directory.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalFormat {
    Pfm,
    Png,
    Both,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[command(flatten)]
    pub common: Common,
    /// sphere, cube, torus or composite.
    #[arg(long)]
    pub shape: Option<String>,
    /// Number of views on the fixture ring.
    #[arg(long)]
    pub views: Option<usize>,
    /// Square image size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Resolution of the ground-truth SDF volume.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Normal map encoding; PNG is 8-bit, PFM exact.
    #[arg(long, value_enum, default_value_t = NormalFormat::Pfm)]
    pub normal_format: NormalFormat,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    /// View directory (rig.json plus per-view images).
    #[arg(long)]
    pub views: PathBuf,
    /// Output mesh (.obj or .ply).
    #[arg(long)]
    pub out: PathBuf,
    /// Architecture preset.
    #[arg(long)]
    pub arch: Option<String>,
    /// MFW1 weight file; seeded weights otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Ground-truth SDF volume, enabling the volume loss terms.
    #[arg(long)]
    pub gt_sdf: Option<PathBuf>,
    /// Take coarse occupancy from --gt-sdf instead of the dense network.
    #[arg(long)]
    pub occupancy_from_gt_sdf: bool,
    /// Occupancy probability threshold.
    #[arg(long)]
    pub occupancy_threshold: Option<f64>,
    /// Write the textured mesh without geometry enhancement.
    #[arg(long)]
    pub skip_enhance: bool,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub arch: Option<String>,
    /// Output MFW1 file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SdfArgs {
    #[command(flatten)]
    pub common: Common,
    /// Closed input mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// The volume covers [-h, h]³.
    #[arg(long)]
    pub half_extent: Option<f64>,
    /// Output VXM1 volume.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scalar VXM1 volume.
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub iso: f64,
    /// Output mesh (.obj or .ply).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub mesh: PathBuf,
    /// NRM1 target normals; the mesh's normal texture otherwise.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Weight of the position term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the normal term.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_displacement: Option<f64>,
    /// Output mesh; a `.enhance.json` report is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predicted mesh.
    #[arg(long, required_unless_present = "manifest")]
    pub pred: Option<PathBuf>,
    /// Ground-truth mesh.
    #[arg(long, required_unless_present = "manifest")]
    pub gt: Option<PathBuf>,
    /// JSON list of {name, pred, gt}; results go to CSV.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    pub manifest: Option<PathBuf>,
    /// Surface samples per mesh.
    #[arg(long)]
    pub points: Option<usize>,
    /// F-score distance threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Views of the evaluation ring used for PSNR.
    #[arg(long)]
    pub views: Option<usize>,
    /// JSON report (single pair) or CSV (manifest); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Cameras to render; an evaluation ring otherwise.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Output view directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl Common {
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load_or_default(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl ReconstructArgs {
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = self.common.config()?;
        set(&mut cfg.arch, self.arch.clone());
        if self.weights.is_some() {
            cfg.weights = self.weights.clone();
        }
        set(&mut cfg.occupancy.threshold, self.occupancy_threshold);
        cfg.occupancy.from_gt_sdf |= self.occupancy_from_gt_sdf;
        cfg.skip_enhance |= self.skip_enhance;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EnhanceArgs {
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = self.common.config()?;
        let e = &mut cfg.enhance;
        set(&mut e.alpha, self.alpha);
        set(&mut e.beta, self.beta);
        set(&mut e.iterations, self.iterations);
        set(&mut e.step, self.step);
        if self.max_displacement.is_some() {
            e.max_displacement = self.max_displacement;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EvalArgs {
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = self.common.config()?;
        set(&mut cfg.eval.points, self.points);
        set(&mut cfg.eval.threshold, self.threshold);
        set(&mut cfg.eval.views, self.views);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flat, serializable view of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub chamfer: f64,
    pub psnr_color: f64,
    pub psnr_normal: f64,
    pub points: usize,
    pub threshold: f64,
    pub align_scale: f64,
    pub align_rotation_deg: f64,
    pub align_translation: [f64; 3],
    pub align_inlier_ratio: f64,
    pub align_rms: f64,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        let t = &r.alignment.transform;
        let cos = ((t.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        Self {
            fscore: r.fscore,
            precision: r.precision,
            recall: r.recall,
            chamfer: r.chamfer,
            psnr_color: r.psnr_color,
            psnr_normal: r.psnr_normal,
            points: r.points,
            threshold: r.threshold,
            align_scale: t.scale,
            align_rotation_deg: cos.acos().to_degrees(),
            align_translation: [t.translation.x, t.translation.y, t.translation.z],
            align_inlier_ratio: r.alignment.inlier_ratio,
            align_rms: r.alignment.rms,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(default)]
    pub name: Option<String>,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

const CSV_HEADER: [&str; 17] = [
    "name", "pred", "gt", "fscore", "precision", "recall", "chamfer", "psnr_color", "psnr_normal", "points", "threshold", "align_scale",
    "align_rotation_deg", "align_tx", "align_ty", "align_tz", "align_inlier_ratio",
];

fn csv_record(name: &str, e: &ManifestEntry, r: &EvalSummary) -> Vec<String> {
    let mut row = vec![name.to_string(), e.pred.display().to_string(), e.gt.display().to_string()];
    let nums = [r.fscore, r.precision, r.recall, r.chamfer, r.psnr_color, r.psnr_normal];
    row.extend(nums.iter().map(f64::to_string));
    row.push(r.points.to_string());
    let more = [r.threshold, r.align_scale, r.align_rotation_deg, r.align_translation[0], r.align_translation[1], r.align_translation[2], r.align_inlier_ratio];
    row.extend(more.iter().map(f64::to_string));
    row
}

#[derive(Debug, Serialize)]
struct EnhanceReport {
    iterations: usize,
    rejections: usize,
    energy_initial: f64,
    energy_final: f64,
    consistency: NormalConsistencyReport,
}

fn parse_shape(name: &str) -> Result<Shape> {
    Shape::parse(name).ok_or_else(|| Error::Usage(format!("unknown shape {name:?} (sphere, cube, torus or composite)")))
}

fn eval_cameras(cfg: &PipelineConfig) -> Result<Vec<Camera>> {
    RingRig::evaluation(cfg.eval.views, cfg.eval.image_size).cameras().map_err(|e| Error::input("eval", e))
}

fn eval_pair(pred: &Path, gt: &Path, cfg: &PipelineConfig, cameras: &[Camera]) -> Result<EvalSummary> {
    let p = mesh_io::load_mesh(pred)?;
    let g = mesh_io::load_mesh(gt)?;
    let report = evaluate(&p, &g, cameras, &cfg.eval_params()).map_err(|e| Error::numeric("eval", e))?;
    Ok(EvalSummary::from(&report))
}

pub fn fixtures(args: &FixturesArgs) -> Result<()> {
    let mut cfg = args.common.config()?;
    set(&mut cfg.fixture.shape, args.shape.clone());
    set(&mut cfg.fixture.views, args.views);
    set(&mut cfg.fixture.image_size, args.size);
    set(&mut cfg.grid.sdf, args.resolution);
    cfg.validate()?;
    let shape = parse_shape(&cfg.fixture.shape)?;
    if cfg.fixture.views == 0 || cfg.fixture.image_size == 0 {
        return Err(Error::Usage("fixtures need at least one view and a non-zero image size".into()));
    }
    let mesh = shape.textured_mesh();
    let cameras = RingRig::fixture(cfg.fixture.views, cfg.fixture.image_size).cameras().map_err(|e| Error::input("fixtures", e))?;
    let views = render_views(&mesh, &cameras).map_err(|e| Error::numeric("render", e))?;
    std::fs::create_dir_all(&args.out).at(&args.out)?;
    rig::save_views(&args.out, &views)?;
    if args.normal_format != NormalFormat::Pfm {
        for (i, v) in views.iter().enumerate() {
            save_image(&rig::view_path(&args.out, i, "normal", "png"), &encode_normals(&v.normal, &v.mask))?;
            if args.normal_format == NormalFormat::Png {
                let pfm = rig::view_path(&args.out, i, "normal", "pfm");
                std::fs::remove_file(&pfm).at(&pfm)?;
            }
        }
    }
    mesh_io::save_mesh(&args.out.join("mesh.obj"), &mesh)?;
    let sdf = pipeline::sdf_volume(&mesh, &cfg, cfg.grid.sdf)?;
    volume_io::save_dense(&args.out.join("sdf.vxm"), &sdf)
}

pub fn reconstruct(args: &ReconstructArgs, exec: &dyn Executor) -> Result<()> {
    let cfg = args.config()?;
    let job = ReconstructJob { views_dir: args.views.clone(), gt_sdf: args.gt_sdf.clone(), out: args.out.clone() };
    pipeline::reconstruct(&cfg, &job, exec).map(|_| ())
}

pub fn weights(args: &WeightsArgs) -> Result<()> {
    let mut cfg = args.common.config()?;
    set(&mut cfg.arch, args.arch.clone());
    cfg.validate()?;
    let arch = cfg.arch_config()?;
    let ws = WeightStore::seeded(&arch, cfg.seed).map_err(|e| Error::input("weights", e))?;
    weights_io::save_weights(&args.out, &ws)
}

pub fn sdf(args: &SdfArgs) -> Result<()> {
    let mut cfg = args.common.config()?;
    set(&mut cfg.grid.half_extent, args.half_extent);
    set(&mut cfg.grid.sdf, args.resolution);
    cfg.validate()?;
    let mesh = mesh_io::load_mesh(&args.mesh)?;
    let vol = pipeline::sdf_volume(&mesh, &cfg, cfg.grid.sdf)?;
    volume_io::save_dense(&args.out, &vol)
}

pub fn extract(args: &ExtractArgs) -> Result<()> {
    args.common.config()?.validate()?;
    let vol = volume_io::load_dense(&args.volume)?;
    let mesh = extract_mesh(&vol, args.iso).map_err(|e| Error::input("extract", e))?;
    if mesh.faces.is_empty() {
        return Err(Error::numeric("extract", format!("{}: no crossing of level {}", args.volume.display(), args.iso)));
    }
    mesh_io::save_mesh(&args.out, &mesh)
}

pub fn enhance(args: &EnhanceArgs) -> Result<()> {
    let cfg = args.config()?;
    let mesh = mesh_io::load_mesh(&args.mesh)?;
    let targets: Vec<Vec3> = match &args.targets {
        Some(p) => mesh_io::load_normals(p)?,
        None => mesh.normals.clone().ok_or_else(|| Error::input("enhance", format!("{}: mesh has no normals and no --targets given", args.mesh.display())))?,
    };
    let result = enhance_geometry(&mesh, &targets, &cfg.enhance).map_err(|e| Error::input("enhance", e))?;
    let consistency = consistency_report(&mesh, &result.mesh, &targets).map_err(|e| Error::input("enhance", e))?;
    mesh_io::save_mesh(&args.out, &result.mesh)?;
    let report = EnhanceReport {
        iterations: result.energies.len() - 1,
        rejections: result.rejections,
        energy_initial: result.energies[0],
        energy_final: *result.energies.last().expect("initial energy recorded"),
        consistency,
    };
    write_json(&pipeline::sibling(&args.out, ".enhance.json"), &report)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.config()?;
    let cameras = eval_cameras(&cfg)?;
    if let Some(manifest) = &args.manifest {
        let entries: Vec<ManifestEntry> =
            serde_json::from_reader(crate::formats::open(manifest)?).map_err(|e| Error::input("eval", format!("{}: {e}", manifest.display())))?;
        let base = manifest.parent().unwrap_or(Path::new(""));
        let mut rows = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let (pred, gt) = (base.join(&e.pred), base.join(&e.gt));
            let summary = eval_pair(&pred, &gt, &cfg, &cameras)?;
            rows.push((e.name.clone().unwrap_or_else(|| format!("{i}")), e, summary));
        }
        let mut out: Box<dyn Write> = match &args.out {
            Some(p) => Box::new(crate::formats::create(p)?),
            None => Box::new(std::io::stdout()),
        };
        let mut w = csv::Writer::from_writer(&mut out);
        let label = args.out.as_deref().unwrap_or(Path::new("<stdout>"));
        let csv_err = |e: csv::Error| Error::input("eval", format!("{}: {e}", label.display()));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for (name, e, summary) in rows {
            w.write_record(csv_record(&name, e, &summary)).map_err(csv_err)?;
        }
        w.flush().at(label)?;
        return Ok(());
    }
    let (Some(pred), Some(gt)) = (&args.pred, &args.gt) else {
        return Err(Error::Usage("eval needs --pred and --gt, or --manifest".into()));
    };
    let summary = eval_pair(pred, gt, &cfg, &cameras)?;
    match &args.out {
        Some(p) => write_json(p, &summary),
        None => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            writeln!(std::io::stdout(), "{text}").at(Path::new("<stdout>"))
        }
    }
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let mut cfg = args.common.config()?;
    set(&mut cfg.eval.views, args.views);
    set(&mut cfg.eval.image_size, args.size);
    cfg.validate()?;
    let mesh = voxelmesh_core::eval::with_default_textures(&mesh_io::load_mesh(&args.mesh)?);
    let cameras = match &args.rig {
        Some(p) => rig::load_rig(p)?,
        None => eval_cameras(&cfg)?,
    };
    let views = render_views(&mesh, &cameras).map_err(|e| Error::numeric("render", e))?;
    std::fs::create_dir_all(&args.out).at(&args.out)?;
    rig::save_views(&args.out, &views)
}

pub fn run(cli: &Cli, exec: &dyn Executor) -> Result<()> {
    match &cli.command {
        Command::Fixtures(a) => fixtures(a),
        Command::Reconstruct(a) => reconstruct(a, exec),
        Command::Weights(a) => weights(a),
        Command::Sdf(a) => sdf(a),
        Command::Extract(a) => extract(a),
        Command::Enhance(a) => enhance(a),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
    }
}
