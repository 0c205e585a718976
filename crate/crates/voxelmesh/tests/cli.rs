use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use clap::CommandFactory;
use voxelmesh::cli::{Cli, EvalSummary};
use voxelmesh::formats::{mesh as mesh_io, rig, volume as volume_io};
use voxelmesh_core::sdf::mesh_to_sdf;

const BIN: &str = env!("CARGO_BIN_EXE_voxelmesh");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("VOXELMESH_THREADS", "2").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, shape: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(shape);
    let mut args = vec!["fixtures", "--shape", shape, "--views", "6", "--resolution", "32", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_lists_every_flag() {
    let cli = Cli::command();
    for sub in cli.get_subcommands() {
        let name = sub.get_name();
        let help = String::from_utf8(ok(&[name, "--help"]).stdout).unwrap();
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "`{name} --help` misses --{long}");
            }
        }
        for common in ["--config", "--seed", "--out"] {
            assert!(help.contains(common), "`{name} --help` misses {common}");
        }
    }
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").join("pred.obj");
    let out = run(&["eval", "--pred", s(&missing), "--gt", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains(s(&missing)), "{err}");

    let out = run(&["reconstruct", "--views", s(&dir.path().join("views")), "--out", s(&dir.path().join("m.obj"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("rig.json"));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeed = 1\n").unwrap();
    let out = run(&["extract", "--volume", "v.vxm", "--out", "m.obj", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("seeed"));
    assert_eq!(run(&["fixtures", "--shape", "blob", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(run(&["reconstruct"]).status.code(), Some(2));
}

#[test]
fn fixtures_round_trip_and_match_mesh_sdf() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "sphere", &[]);
    let views = rig::load_views(&fx).unwrap();
    assert_eq!(views.len(), 6);
    for i in 0..6 {
        for what in ["rgb.png", "normal.pfm", "mask.png"] {
            assert!(fx.join(format!("view_{i:03}_{what}")).exists());
        }
    }
    let mesh = mesh_io::load_mesh(&fx.join("mesh.obj")).unwrap();
    let sdf = volume_io::load_dense(&fx.join("sdf.vxm")).unwrap();
    let oracle = mesh_to_sdf(&mesh, &sdf.spec).unwrap();
    let worst = sdf.values.iter().zip(&oracle.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-4, "fixture SDF deviates by {worst}");

    // Deterministic down to the bytes.
    let again = fixture(&dir.path().join("again"), "sphere", &[]);
    for f in ["rig.json", "view_003_rgb.png", "view_003_normal.pfm", "mesh.obj", "sdf.vxm"] {
        assert_eq!(std::fs::read(fx.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f} differs");
    }

    let png = fixture(&dir.path().join("png"), "cube", &["--normal-format", "png"]);
    assert!(!png.join("view_000_normal.pfm").exists());
    assert_eq!(rig::load_views(&png).unwrap().len(), 6);
}

#[test]
fn eval_of_a_mesh_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "torus", &[]);
    let mesh = fx.join("mesh.obj");
    let report = dir.path().join("self.json");
    ok(&["eval", "--pred", s(&mesh), "--gt", s(&mesh), "--out", s(&report)]);
    let r: EvalSummary = serde_json::from_value(read_json(&report)).unwrap();
    assert_eq!(r.fscore, 1.0);
    assert!(r.chamfer < 1e-6);
    assert_eq!(r.points, 100_000);
    assert_eq!(r.threshold, 0.05);
}

#[test]
fn extracted_fixture_sdf_is_within_a_voxel() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "sphere", &[]);
    let extracted = dir.path().join("extracted.ply");
    ok(&["extract", "--volume", s(&fx.join("sdf.vxm")), "--out", s(&extracted)]);
    let report = dir.path().join("ex.json");
    ok(&["eval", "--pred", s(&extracted), "--gt", s(&fx.join("mesh.obj")), "--points", "20000", "--out", s(&report)]);
    let r: EvalSummary = serde_json::from_value(read_json(&report)).unwrap();
    // Evaluation runs in the ground truth's unit box; express the voxel size
    // there as well.
    let gt = mesh_io::load_mesh(&fx.join("mesh.obj")).unwrap();
    let unit_scale = gt.unit_box_transform().unwrap().scale;
    let voxel = 1.0 / 32.0 * unit_scale;
    assert!(r.chamfer < voxel, "chamfer {} vs voxel {voxel}", r.chamfer);
}

#[test]
fn eval_manifest_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "cube", &[]);
    let manifest = dir.path().join("batch.json");
    std::fs::write(&manifest, r#"[{"name": "same", "pred": "cube/mesh.obj", "gt": "cube/mesh.obj"}, {"pred": "cube/mesh.obj", "gt": "cube/mesh.obj"}]"#).unwrap();
    let csv_path = dir.path().join("out.csv");
    ok(&["eval", "--manifest", s(&manifest), "--points", "5000", "--out", s(&csv_path)]);
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let headers = rd.headers().unwrap().clone();
    let fscore = headers.iter().position(|h| h == "fscore").unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "same");
    assert_eq!(&rows[1][0], "1");
    assert!(rows.iter().all(|r| r[fscore].parse::<f64>().unwrap() == 1.0));
    assert!(fx.exists());
}

fn reconstruct(fx: &Path, out: &Path, extra: &[&str]) -> Output {
    let gt = fx.join("sdf.vxm");
    let mut args = vec!["reconstruct", "--views", s(fx), "--gt-sdf", s(&gt), "--occupancy-from-gt-sdf", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn reconstruct_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "sphere", &[]);

    let full = dir.path().join("full.obj");
    let started = Instant::now();
    reconstruct(&fx, &full, &[]);
    let wall = started.elapsed().as_secs_f64();
    let mesh = mesh_io::load_mesh(&full).unwrap();
    assert!(!mesh.faces.is_empty());
    assert!(mesh.is_closed_manifold());
    assert!(mesh.colors.is_some() && mesh.normals.is_some());

    let prov = read_json(&dir.path().join("full.provenance.json"));
    let total = prov["total_seconds"].as_f64().unwrap();
    let sum: f64 = prov["stages"].as_array().unwrap().iter().map(|s| s["seconds"].as_f64().unwrap()).sum();
    assert!((sum - total).abs() <= 0.05 * total, "stages {sum} vs total {total}");
    assert!(total <= wall);
    assert_eq!(prov["seed"], 0);
    let loss = read_json(&dir.path().join("full.loss.json"));
    assert_eq!(loss["volume_terms_supervised"], true);
    assert!(loss["loss"]["total"].as_f64().unwrap().is_finite());

    // Skipping enhancement reproduces the checkpoint written by a full run.
    let skipped = dir.path().join("skipped.obj");
    reconstruct(&fx, &skipped, &["--skip-enhance"]);
    assert_eq!(std::fs::read(&skipped).unwrap(), std::fs::read(dir.path().join("full.pre_enhance.obj")).unwrap());
    assert!(!dir.path().join("skipped.pre_enhance.obj").exists());

    // Reruns are byte-identical.
    let again = dir.path().join("again.obj");
    reconstruct(&fx, &again, &[]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(std::fs::read(dir.path().join("full.loss.json")).unwrap(), std::fs::read(dir.path().join("again.loss.json")).unwrap());

    // A weight file written for the same seed gives the same mesh.
    let w = dir.path().join("toy.mfw");
    ok(&["weights", "--out", s(&w)]);
    let from_file = dir.path().join("from_file.obj");
    reconstruct(&fx, &from_file, &["--weights", s(&w)]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&from_file).unwrap());
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "sphere", &[]);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "seed = 4\nskip_enhance = true\n").unwrap();
    let a = dir.path().join("a.obj");
    reconstruct(&fx, &a, &["--config", s(&cfg), "--seed", "0"]);
    let prov = read_json(&dir.path().join("a.provenance.json"));
    assert_eq!(prov["seed"], 0);
    assert_eq!(prov["enhance_iterations"], 0);
    let b = dir.path().join("b.obj");
    let out = run(&["reconstruct", "--views", s(&fx), "--out", s(&b), "--config", s(&cfg)]);
    // Seed 4 from the file is honoured when no flag is given.
    if out.status.success() {
        assert_eq!(read_json(&dir.path().join("b.provenance.json"))["seed"], 4);
    } else {
        assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "cube", &[]);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}.obj"));
        let st = Command::new(BIN)
            .args(["reconstruct", "--views", s(&fx), "--gt-sdf", s(&fx.join("sdf.vxm")), "--occupancy-from-gt-sdf", "--out", s(&out)])
            .env("VOXELMESH_THREADS", threads)
            .status()
            .unwrap();
        assert!(st.success());
        outputs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn enhance_and_render_commands() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), "torus", &[]);
    let out = dir.path().join("enh.obj");
    ok(&["enhance", "--mesh", s(&fx.join("mesh.obj")), "--iterations", "5", "--out", s(&out)]);
    let report = read_json(&dir.path().join("enh.enhance.json"));
    assert!(report["energy_final"].as_f64().unwrap() <= report["energy_initial"].as_f64().unwrap());
    assert!(report["iterations"].as_u64().unwrap() <= 5);

    let rendered = dir.path().join("views");
    ok(&["render", "--mesh", s(&out), "--rig", s(&fx.join("rig.json")), "--out", s(&rendered)]);
    let views = rig::load_views(&rendered).unwrap();
    assert_eq!(views.len(), 6);
    assert!(views.views.iter().all(|v| v.mask.iter().any(|m| *m)));
    ok(&["render", "--mesh", s(&out), "--views", "2", "--size", "16", "--out", s(&dir.path().join("ring"))]);
    assert_eq!(rig::load_views(&dir.path().join("ring")).unwrap().len(), 2);
}
