//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxelmesh::config::PipelineConfig;
use voxelmesh::parallel::RayonExecutor;
use voxelmesh::pipeline::{self, Stopwatch};
use voxelmesh_core::backbone::{
    cross_attention, encode_views, layer_shapes, pixel_token, prepare_views, sparsevoxelformer_forward, voxelformer_forward, ArchConfig,
    Sequential, Tensor, UNetConfig, WeightStore,
};
use voxelmesh_core::camera::{Camera, Image, RingRig, View, ViewSet};
use voxelmesh_core::enhance::{consistency_report, enhance_geometry, EnhanceParams};
use voxelmesh_core::eval::{align, chamfer_fscore, evaluate, AlignParams, EvalParams};
use voxelmesh_core::math::{axis_angle, Mat3, Vec3};
use voxelmesh_core::meshing::{edge_vertex, extract_mesh, extract_mesh_with_jacobian};
use voxelmesh_core::render::{backward, image_mse, rasterize, render_views, total_loss, LossWeights, RenderTarget, BACKGROUND};
use voxelmesh_core::sdf::mesh_to_sdf;
use voxelmesh_core::shapes::{self, Shape};
use voxelmesh_core::volume::{occupancy_from_sdf, subdivide_occupied, Aabb, DenseVolume, GridSpec};
use voxelmesh_core::{Similarity, TriMesh};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rotation_deg(r: &Mat3) -> f64 {
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos().to_degrees()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1 ----

fn oracle_masked_mse(a: &Image, b: &Image, mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, m) in mask.iter().enumerate() {
        if *m {
            for k in 0..a.channels {
                let d = a.data[p * a.channels + k] - b.data[p * a.channels + k];
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn half_size(i: &Image) -> Image {
    let mut o = Image::new(i.width / 2, i.height / 2, i.channels);
    for y in 0..o.height {
        for x in 0..o.width {
            for k in 0..i.channels {
                let s: f64 = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().map(|(dx, dy)| i.pixel(2 * x + dx, 2 * y + dy)[k]).sum();
                o.pixel_mut(x, y)[k] = s / 4.0;
            }
        }
    }
    o
}

/// Three-level average pyramid; per level the mean absolute difference of
/// forward-difference gradients, plus the coarsest level's mean absolute
/// difference.
fn oracle_perceptual(a: &Image, b: &Image) -> f64 {
    let mut pa = vec![a.clone()];
    let mut pb = vec![b.clone()];
    while pa.len() < 3 && pa.last().unwrap().width >= 2 && pa.last().unwrap().height >= 2 {
        let (na, nb) = (half_size(pa.last().unwrap()), half_size(pb.last().unwrap()));
        pa.push(na);
        pb.push(nb);
    }
    let mut total = 0.0;
    for (ia, ib) in pa.iter().zip(&pb) {
        let mut diffs = Vec::new();
        for y in 0..ia.height {
            for x in 0..ia.width {
                for k in 0..ia.channels {
                    if x + 1 < ia.width {
                        diffs.push(((ia.pixel(x + 1, y)[k] - ia.pixel(x, y)[k]) - (ib.pixel(x + 1, y)[k] - ib.pixel(x, y)[k])).abs());
                    }
                    if y + 1 < ia.height {
                        diffs.push(((ia.pixel(x, y + 1)[k] - ia.pixel(x, y)[k]) - (ib.pixel(x, y + 1)[k] - ib.pixel(x, y)[k])).abs());
                    }
                }
            }
        }
        if !diffs.is_empty() {
            total += diffs.iter().sum::<f64>() / diffs.len() as f64;
        }
    }
    let (ca, cb) = (pa.last().unwrap(), pb.last().unwrap());
    total + ca.data.iter().zip(&cb.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / ca.data.len() as f64
}

fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 3, |_, _, _| r.random::<f64>())
}

fn criterion_1() -> Outcome {
    let paper = [80.0, 2.0, 16.0, 2.0, 8.0, 8.0];
    let weights = LossWeights::default();
    ensure!(weights.as_array() == paper, "default loss weights {:?}", weights.as_array());
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, h) = (r.random_range(4..14), r.random_range(4..14));
        let n_views = r.random_range(1..4);
        let spec = GridSpec::unit(r.random_range(2..6)).unwrap();
        let vol = |r: &mut ChaCha8Rng| DenseVolume::from_fn(spec, |_| r.random::<f64>() * 2.0 - 1.0);
        let (po, go, ps, gs) = (vol(&mut r), vol(&mut r), vol(&mut r), vol(&mut r));
        let mut rendered = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n_views {
            let eye = Vec3::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5, r.random::<f64>() - 0.5).normalize() * 2.0;
            let camera = Camera::look_at(&eye, &Vec3::zeros(), &Vec3::z(), 40.0, w, h).unwrap();
            let mask_r: Vec<bool> = (0..w * h).map(|_| r.random::<f64>() < 0.5).collect();
            rendered.push(RenderTarget {
                camera: camera.clone(),
                rgb: random_image(&mut r, w, h),
                normal: random_image(&mut r, w, h),
                mask: mask_r,
                depth: vec![1.0; w * h],
                face: vec![0; w * h],
                bary: vec![[1.0 / 3.0; 3]; w * h],
            });
            let mask_v: Vec<bool> = (0..w * h).map(|_| r.random::<f64>() < 0.5).collect();
            refs.push(View { camera, rgb: random_image(&mut r, w, h), normal: random_image(&mut r, w, h), mask: mask_v });
        }
        let got = total_loss(&rendered, &refs, &po, &go, &ps, &gs, &weights).map_err(|e| e.to_string())?;

        let mut terms = [0.0; 6];
        for (t, v) in rendered.iter().zip(&refs) {
            let union: Vec<bool> = t.mask.iter().zip(&v.mask).map(|(a, b)| *a || *b).collect();
            let rot: Mat3 = v.camera.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned();
            let world = Image::from_fn(w, h, 3, |x, y, k| (rot * v.normal.vec3(x, y))[k]);
            terms[0] += oracle_masked_mse(&t.rgb, &v.rgb, &union);
            terms[1] += oracle_perceptual(&t.rgb, &v.rgb);
            terms[2] += oracle_masked_mse(&t.normal, &world, &union);
            terms[3] += oracle_perceptual(&t.normal, &world);
        }
        for t in &mut terms[..4] {
            *t /= n_views as f64;
        }
        let vmse = |a: &DenseVolume, b: &DenseVolume| a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.values.len() as f64;
        terms[4] = vmse(&po, &go);
        terms[5] = vmse(&ps, &gs);
        let want: f64 = paper.iter().zip(&terms).map(|(w, t)| w * t).sum();
        let rel = (got.total - want).abs() / want.abs();
        worst = worst.max(rel);
        ensure!(rel <= 1e-6, "total {} vs oracle {want} (rel {rel:e})", got.total);
    }
    Ok(format!("100 instances, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 2 ----

fn linear(map: &mut BTreeMap<String, Tensor>, path: &str, w: Vec<f64>, b: Vec<f64>, inp: usize) {
    let out = b.len();
    assert_eq!(w.len(), out * inp);
    map.insert(format!("{path}.weight"), Tensor { shape: vec![out, inp], data: w });
    map.insert(format!("{path}.bias"), Tensor { shape: vec![out], data: b });
}

fn eye(rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|i| if i / cols == i % cols { 1.0 } else { 0.0 }).collect()
}

fn apply(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let inp = x.len();
    (0..b.len()).map(|o| b[o] + (0..inp).map(|i| w[o * inp + i] * x[i]).sum::<f64>()).collect()
}

fn criterion_2() -> Outcome {
    let (c, pw) = (4usize, 7usize);
    let mut r = rng(2);
    let mut uni = |n: usize| (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect::<Vec<f64>>();

    // Identity projections; keys made identical by zero key weights.
    let key_bias = uni(c);
    let mut map = BTreeMap::new();
    linear(&mut map, "x.q", eye(c, c), vec![0.0; c], c);
    linear(&mut map, "x.k_vox", vec![0.0; c * c], key_bias.clone(), c);
    linear(&mut map, "x.k_pix", vec![0.0; c * pw], key_bias, pw);
    linear(&mut map, "x.v_vox", eye(c, c), vec![0.0; c], c);
    linear(&mut map, "x.v_pix", eye(c, pw), vec![0.0; c], pw);
    linear(&mut map, "x.out", eye(c, c), vec![0.0; c], c);
    let ws = WeightStore::from_tensors(0, map);
    let mut worst: f64 = 0.0;
    for m in [1usize, 3, 6] {
        let x = uni(c);
        let pixels: Vec<Vec<f64>> = (0..m).map(|_| uni(pw)).collect();
        for heads in [1, 2] {
            let got = cross_attention(&ws, "x", &x, &pixels, pw, heads).map_err(|e| e.to_string())?;
            for ch in 0..c {
                let mean = (x[ch] + pixels.iter().map(|p| p[ch]).sum::<f64>()) / (m + 1) as f64;
                worst = worst.max((got[ch] - mean).abs());
            }
        }
    }
    ensure!(worst <= 1e-6, "degenerate case off the value mean by {worst:e}");

    // General weights against a direct softmax.
    let mut general: f64 = 0.0;
    for m in [1usize, 3, 6] {
        let heads = 2;
        let mut map = BTreeMap::new();
        let mut params = BTreeMap::new();
        for (name, inp) in [("q", c), ("k_vox", c), ("v_vox", c), ("k_pix", pw), ("v_pix", pw), ("out", c)] {
            let (w, b) = (uni(c * inp), uni(c));
            linear(&mut map, &format!("x.{name}"), w.clone(), b.clone(), inp);
            params.insert(name, (w, b));
        }
        let ws = WeightStore::from_tensors(0, map);
        let x = uni(c);
        let pixels: Vec<Vec<f64>> = (0..m).map(|_| uni(pw)).collect();
        let got = cross_attention(&ws, "x", &x, &pixels, pw, heads).map_err(|e| e.to_string())?;

        let p = |n: &str, v: &[f64]| apply(&params[n].0, &params[n].1, v);
        let q = p("q", &x);
        let mut keys = vec![p("k_vox", &x)];
        let mut vals = vec![p("v_vox", &x)];
        for px in &pixels {
            keys.push(p("k_pix", px));
            vals.push(p("v_pix", px));
        }
        let d = c / heads;
        let mut mixed = vec![0.0; c];
        for h in 0..heads {
            let logits: Vec<f64> = keys.iter().map(|k| (0..d).map(|i| q[h * d + i] * k[h * d + i]).sum::<f64>() / (d as f64).sqrt()).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for i in 0..d {
                mixed[h * d + i] = logits.iter().zip(&vals).map(|(l, v)| l.exp() / z * v[h * d + i]).sum();
            }
        }
        let want = p("out", &mixed);
        general = general.max(max_abs_diff(&got, &want));
    }
    ensure!(general <= 1e-6, "general case off the direct softmax by {general:e}");
    Ok(format!("mean oracle max error {worst:.1e}, softmax oracle max error {general:.1e} (m = 1, 3, 6)"))
}

// ---------------------------------------------------------------- 3 ----

fn sphere_views(count: usize, size: usize) -> ViewSet {
    let cams = RingRig::fixture(count, size).cameras().unwrap();
    ViewSet::new(render_views(&Shape::Sphere.textured_mesh(), &cams).unwrap()).unwrap()
}

fn criterion_3() -> Outcome {
    let cfg = ArchConfig::paper();
    cfg.validate().map_err(|e| e.to_string())?;
    let res = |u: &UNetConfig| u.levels.iter().map(|l| l.resolution).collect::<Vec<_>>();
    let ch = |u: &UNetConfig| u.levels.iter().map(|l| l.channels).collect::<Vec<_>>();
    let (d, s) = (&cfg.voxelformer, &cfg.sparse_voxelformer);
    ensure!(d.levels.len() == 4 && ch(d) == [64, 128, 256, 512], "dense levels {:?}", ch(d));
    ensure!(d.transformer.layers == 6 && d.transformer.width == 512, "dense transformer {:?}", d.transformer);
    ensure!(s.levels.len() == 6 && ch(s) == [16, 32, 64, 128, 512, 2048], "sparse levels {:?}", ch(s));
    ensure!(s.transformer.layers == 16 && s.transformer.width == 1024, "sparse transformer {:?}", s.transformer);
    ensure!(s.out_channels == 32, "sparse output width {}", s.out_channels);
    ensure!(res(d)[0] == 64 && res(s)[0] == 256, "resolutions {:?} {:?}", res(d), res(s));
    let shapes = layer_shapes(&cfg);
    let count = |prefix: &str| shapes.iter().filter(|(p, _)| p.starts_with(prefix) && p.ends_with("attn.q.weight")).count();
    ensure!(count("voxelformer.bottleneck.") == 6 && count("sparsevoxelformer.bottleneck.") == 16, "transformer layer tensors");

    let started = Instant::now();
    let toy = PipelineConfig::default();
    let arch = toy.arch_config().map_err(|e| e.to_string())?;
    let views = sphere_views(6, toy.fixture.image_size);
    let ws = WeightStore::seeded(&arch, toy.seed).map_err(|e| e.to_string())?;
    let gt = mesh_to_sdf(&Shape::Sphere.mesh(), &GridSpec::cubic(toy.grid.sdf, toy.bounds()).unwrap()).map_err(|e| e.to_string())?;
    let out = pipeline::run(&toy, &arch, &views, &ws, Some(&gt), &Sequential, &mut Stopwatch::new()).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure!(!out.mesh.faces.is_empty(), "toy run produced an empty mesh");
    ensure!(secs < 60.0, "toy run took {secs:.1} s on one thread");
    Ok(format!(
        "paper preset dimensions exact; toy 6-view run on one thread {secs:.2} s, {} coarse voxels, {} sparse sites, {} faces",
        out.occupied_coarse,
        out.sparse_sites,
        out.mesh.faces.len()
    ))
}

// ---------------------------------------------------------------- 4 ----

fn fibonacci_sphere(n: usize, r: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(rho * t.cos(), rho * t.sin(), z) * r
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let radius = 0.35;
    let spec = GridSpec::cubic(64, Aabb::centered_cube(0.5)).unwrap();
    let voxel = spec.min_voxel_size();
    let sdf = DenseVolume::from_fn(spec, |p| p.norm() - radius);
    let mesh = extract_mesh(&sdf, 0.0).map_err(|e| e.to_string())?;
    let samples = mesh.sample_surface(100_000, 4).map_err(|e| e.to_string())?;
    let one_sided = samples.iter().map(|p| (p.norm() - radius).abs()).sum::<f64>() / samples.len() as f64;
    let c = chamfer_fscore(&samples, &fibonacci_sphere(100_000, radius), 0.05).map_err(|e| e.to_string())?;
    ensure!(c.chamfer < 0.5 * voxel, "chamfer {} vs half voxel {}", c.chamfer, 0.5 * voxel);
    ensure!(one_sided < 0.5 * voxel, "mean distance to sphere {one_sided}");

    let n = Vec3::new(0.3, -0.5, 0.8).normalize();
    let offset = 0.0123;
    let plane = DenseVolume::from_fn(GridSpec::cubic(16, Aabb::centered_cube(0.5)).unwrap(), |p| n.dot(&p) - offset);
    let pm = extract_mesh(&plane, 0.0).map_err(|e| e.to_string())?;
    ensure!(!pm.vertices.is_empty(), "plane produced no vertices");
    let worst = pm.vertices.iter().map(|v| (n.dot(v) - offset).abs()).fold(0.0, f64::max);
    ensure!(worst <= 1e-5, "plane vertex off by {worst:e}");
    Ok(format!(
        "sphere chamfer {:.2e} = {:.3} voxel (one-sided {:.2e}); plane vertices within {worst:.1e}",
        c.chamfer,
        c.chamfer / voxel,
        one_sided
    ))
}

// ---------------------------------------------------------------- 5 ----

fn random_scene(r: &mut ChaCha8Rng) -> TriMesh {
    let spec = GridSpec::cubic(10, Aabb::centered_cube(0.6)).unwrap();
    let sdf = DenseVolume::from_fn(spec, |p| (p - Vec3::new(0.03, -0.02, 0.01)).norm() - 0.4);
    let mut m = extract_mesh(&sdf, 0.0).unwrap();
    let n = m.vertices.len();
    m.colors = Some((0..n).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect());
    m.normals = Some(m.vertices.iter().map(|v| (v + Vec3::new(r.random::<f64>() * 0.2, 0.0, 0.0)).normalize()).collect());
    m
}

fn weighted_render(m: &TriMesh, cam: &Camera, wr: &Image, wn: &Image) -> (f64, Vec<u32>) {
    let t = rasterize(m, cam).unwrap();
    let dot = |a: &Image, b: &Image| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
    (dot(&t.rgb, wr) + dot(&t.normal, wn), t.face)
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    // Edge crossings.
    let mut edge_worst: f64 = 0.0;
    for _ in 0..200 {
        let a = r.random::<f64>() * 0.9 + 0.05;
        let b = -(r.random::<f64>() * 0.9 + 0.05);
        let (a, b) = if r.random::<bool>() { (a, b) } else { (b, a) };
        let pa = Vec3::new(r.random(), r.random(), r.random());
        let pb = Vec3::new(r.random(), r.random(), r.random());
        let e = edge_vertex(a, b, &pa, &pb).map_err(|e| e.to_string())?;
        let h = 1e-6;
        let pos = |a: f64, b: f64| edge_vertex(a, b, &pa, &pb).unwrap().position;
        let fa = (pos(a + h, b) - pos(a - h, b)) / (2.0 * h);
        let fb = (pos(a, b + h) - pos(a, b - h)) / (2.0 * h);
        for (fd, an) in [(fa, e.d_position_d_a), (fb, e.d_position_d_b)] {
            for k in 0..3 {
                let rel = (fd[k] - an[k]).abs() / an[k].abs().max(1e-3);
                edge_worst = edge_worst.max(rel);
            }
        }
    }
    ensure!(edge_worst <= 1e-4, "edge derivative relative error {edge_worst:e}");

    // Rasterizer attribute gradients.
    let m = random_scene(&mut r);
    let cam = Camera::look_at(&Vec3::new(1.6, 0.7, 0.5), &Vec3::zeros(), &Vec3::z(), 35.0, 16, 16).unwrap();
    let wr = Image::from_fn(16, 16, 3, |_, _, _| r.random::<f64>() - 0.5);
    let wn = Image::from_fn(16, 16, 3, |_, _, _| r.random::<f64>() - 0.5);
    let t = rasterize(&m, &cam).unwrap();
    let g = backward(&m, &t, Some(&wr), Some(&wn)).map_err(|e| e.to_string())?;
    let h = 1e-4;
    let mut attr_worst: f64 = 0.0;
    let mut attr_checked = 0;
    let covered: Vec<usize> = t.face.iter().filter(|f| **f != BACKGROUND).flat_map(|f| m.faces[*f as usize]).map(|i| i as usize).collect();
    for &v in covered.iter().step_by(5).take(12) {
        for k in 0..3 {
            for normal in [false, true] {
                let bump = |d: f64| {
                    let mut p = m.clone();
                    let attr = if normal { p.normals.as_mut().unwrap() } else { p.colors.as_mut().unwrap() };
                    attr[v][k] += d;
                    weighted_render(&p, &cam, &wr, &wn).0
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = if normal { g.normals[v][k] } else { g.colors[v][k] };
                attr_worst = attr_worst.max((fd - an).abs() / an.abs().max(1e-6));
                attr_checked += 1;
            }
        }
    }
    ensure!(attr_worst <= 1e-4, "attribute gradient relative error {attr_worst:e}");

    // SDF value -> vertex positions -> rendered color -> MSE.
    let spec = GridSpec::cubic(8, Aabb::centered_cube(0.6)).unwrap();
    let sdf = DenseVolume::from_fn(spec, |p| (p - Vec3::new(0.04, -0.03, 0.02)).norm() - 0.33);
    let base = extract_mesh_with_jacobian(&sdf, 0.0).map_err(|e| e.to_string())?;
    let n = base.mesh.vertices.len();
    let colors: Vec<Vec3> = (0..n).map(|i| Vec3::new((i % 7) as f64 / 7.0, (i % 3) as f64 / 3.0, (i % 5) as f64 / 5.0)).collect();
    let cam = Camera::look_at(&Vec3::new(1.5, 0.8, 0.6), &Vec3::zeros(), &Vec3::z(), 30.0, 24, 24).unwrap();
    let reference = Image::filled(24, 24, 3, 0.3);
    let render = |s: &DenseVolume| {
        let mut m = extract_mesh_with_jacobian(s, 0.0).unwrap().mesh;
        m.colors = Some(colors.clone());
        m.normals = Some(vec![Vec3::z(); m.vertices.len()]);
        let t = rasterize(&m, &cam).unwrap();
        (m, t)
    };
    let (m, t) = render(&sdf);
    let mse = image_mse(&t.rgb, &reference, None).map_err(|e| e.to_string())?;
    let g = backward(&m, &t, Some(&mse.grad), None).map_err(|e| e.to_string())?;
    let mut dl_dsdf = BTreeMap::new();
    for (v, entries) in base.jacobian.iter().enumerate() {
        for (idx, d) in entries {
            *dl_dsdf.entry(*idx).or_insert(0.0) += g.positions[v].dot(d);
        }
    }
    let h = 1e-6;
    let mut chain_worst: f64 = 0.0;
    let mut chain_checked = 0;
    for (&idx, &an) in &dl_dsdf {
        if an.abs() < 1e-4 {
            continue;
        }
        let mut p = sdf.clone();
        p.values[idx] += h;
        let mut q = sdf.clone();
        q.values[idx] -= h;
        let (mp, tp) = render(&p);
        let (mq, tq) = render(&q);
        // Skip values whose perturbation changes topology or coverage.
        if mp.faces != m.faces || mq.faces != m.faces || tp.face != t.face || tq.face != t.face {
            continue;
        }
        let fd = (image_mse(&tp.rgb, &reference, None).unwrap().value - image_mse(&tq.rgb, &reference, None).unwrap().value) / (2.0 * h);
        chain_worst = chain_worst.max((fd - an).abs() / an.abs());
        chain_checked += 1;
    }
    ensure!(chain_checked >= 5, "only {chain_checked} SDF values checked");
    ensure!(chain_worst <= 1e-3, "SDF-to-loss chain relative error {chain_worst:e}");
    Ok(format!(
        "edge {edge_worst:.1e}, attributes {attr_worst:.1e} over {attr_checked}, SDF chain {chain_worst:.1e} over {chain_checked} values"
    ))
}

// ---------------------------------------------------------------- 6 ----

fn criterion_6() -> Outcome {
    let (m, targets) = shapes::noisy_icosphere(0.35, 5, 0.005, 1);
    let out = enhance_geometry(&m, &targets, &EnhanceParams::default()).map_err(|e| e.to_string())?;
    let report = consistency_report(&m, &out.mesh, &targets).map_err(|e| e.to_string())?;
    let i = report.before.thresholds_deg.iter().position(|t| *t == 10.0).ok_or("no 10° threshold")?;
    let (before, after) = (report.before.fractions[i], report.after.fractions[i]);
    ensure!(after > before, "fraction under 10° went {before} -> {after}");
    ensure!(out.energies.windows(2).all(|w| w[1] <= w[0]), "energy increased on an accepted step");
    Ok(format!(
        "{} vertices, under 10°: {:.2}% -> {:.2}%, energy {:.4e} -> {:.4e} over {} steps",
        m.vertices.len(),
        before * 100.0,
        after * 100.0,
        out.energies[0],
        out.energies.last().unwrap(),
        out.energies.len() - 1
    ))
}

// ---------------------------------------------------------------- 7 ----

fn brute_chamfer(a: &[Vec3], b: &[Vec3], th: f64) -> (f64, f64) {
    let nn = |p: &Vec3, set: &[Vec3]| set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
    let da: Vec<f64> = a.iter().map(|p| nn(p, b)).collect();
    let db: Vec<f64> = b.iter().map(|p| nn(p, a)).collect();
    let chamfer = 0.5 * (da.iter().sum::<f64>() / da.len() as f64 + db.iter().sum::<f64>() / db.len() as f64);
    let p = da.iter().filter(|d| **d < th).count() as f64 / da.len() as f64;
    let r = db.iter().filter(|d| **d < th).count() as f64 / db.len() as f64;
    (chamfer, if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

fn criterion_7() -> Outcome {
    let params = EvalParams::default();
    ensure!(params.points == 100_000 && params.threshold == 0.05, "defaults {} points, threshold {}", params.points, params.threshold);
    let m = Shape::Torus.textured_mesh();
    let cams = RingRig::evaluation(4, 48).cameras().unwrap();
    let rep = evaluate(&m, &m, &cams, &params).map_err(|e| e.to_string())?;
    ensure!(rep.fscore == 1.0, "self F-score {}", rep.fscore);
    ensure!(rep.chamfer < 1e-6, "self chamfer {}", rep.chamfer);

    let gt = Shape::Composite.mesh();
    let applied = Similarity::new(0.8, axis_angle(&Vec3::new(0.0, 1.0, 0.0), 30f64.to_radians()), Vec3::new(0.05, -0.02, 0.1));
    let a = align(&gt.transformed(&applied), &gt, &AlignParams::default()).map_err(|e| e.to_string())?;
    let total = a.transform.compose(&applied);
    let (rot_err, scale_err) = (rotation_deg(&total.rotation), (total.scale - 1.0).abs());
    ensure!(rot_err < 1.0 && scale_err < 0.01, "alignment residual {rot_err}° / scale {scale_err}");

    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let cloud = |r: &mut ChaCha8Rng, s: f64| (0..100).map(|_| Vec3::new(r.random(), r.random(), r.random()) * s).collect::<Vec<_>>();
        let a = cloud(&mut r, 1.0);
        let b = cloud(&mut r, 0.3 + trial as f64 * 0.05);
        let th = 0.02 + 0.01 * trial as f64;
        let got = chamfer_fscore(&a, &b, th).map_err(|e| e.to_string())?;
        let (c, f) = brute_chamfer(&a, &b, th);
        worst = worst.max((got.chamfer - c).abs()).max((got.fscore - f).abs());
    }
    ensure!(worst <= 1e-9, "chamfer/F-score differ from brute force by {worst:e}");
    Ok(format!(
        "self F-score {:.3}, chamfer {:.1e}; 30°/0.8x recovered to {rot_err:.3}° and {:.3}% scale; brute-force gap {worst:.1e}",
        rep.fscore,
        rep.chamfer,
        scale_err * 100.0
    ))
}

// ---------------------------------------------------------------- 8 ----

fn criterion_8() -> Outcome {
    let arch = ArchConfig::toy();
    let ws = WeightStore::seeded(&arch, 8).map_err(|e| e.to_string())?;
    let bounds = Aabb::centered_cube(0.5);
    let views = sphere_views(3, 32);
    let forward = |views: &ViewSet, bounds: &Aabb| {
        let feats = encode_views(views, &arch, &ws).unwrap();
        let prepared = prepare_views(views, &feats).unwrap();
        voxelformer_forward(&arch, &ws, &prepared, bounds, &Sequential).unwrap()
    };
    let occ = DenseVolume::from_fn(GridSpec::cubic(16, bounds).unwrap(), |p| if (p.norm() - 0.35).abs() < 0.08 { 1.0 } else { 0.0 });
    let grid = subdivide_occupied(&occ, 2, &ws.get("sparsevoxelformer.input_token").unwrap().data).unwrap();
    let sparse = |views: &ViewSet, grid: &voxelmesh_core::SparseVoxelGrid| {
        let feats = encode_views(views, &arch, &ws).unwrap();
        let prepared = prepare_views(views, &feats).unwrap();
        sparsevoxelformer_forward(&arch, &ws, &prepared, grid, &Sequential).unwrap()
    };
    let a = forward(&views, &bounds);
    let sa = sparse(&views, &grid);

    // View order.
    let mut permuted = views.clone();
    permuted.views.rotate_left(1);
    permuted.views.swap(0, 1);
    let perm_dense = max_abs_diff(&a.values, &forward(&permuted, &bounds).values);
    let perm_sparse = max_abs_diff(&sa.features, &sparse(&permuted, &grid).features);
    ensure!(perm_dense < 1e-5 && perm_sparse < 1e-5, "view permutation changed outputs by {perm_dense:e} / {perm_sparse:e}");

    // Rigid motion: projections of moved points through moved cameras are
    // unchanged, image-feature and color entries match and normal entries
    // rotate. Normal features are encoded from world-frame normals, so they
    // are excluded.
    let feats = encode_views(&views, &arch, &ws).unwrap();
    let prepared = prepare_views(&views, &feats).unwrap();
    let mut r = rng(8);
    let mut proj_worst: f64 = 0.0;
    let mut token_worst: f64 = 0.0;
    let mut seen = 0;
    let c = feats[0].rgb.channels;
    let cw = 2 * c + 3;
    for _ in 0..5 {
        let axis = Vec3::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5, r.random::<f64>() - 0.5).normalize();
        let rot = axis_angle(&axis, r.random::<f64>() * std::f64::consts::PI);
        let motion = Similarity::new(1.0, rot, Vec3::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
        let moved = ViewSet::new(views.views.iter().map(|v| View { camera: v.camera.moved(&motion), ..v.clone() }).collect()).unwrap();
        let mfeats = encode_views(&moved, &arch, &ws).unwrap();
        let mprep = prepare_views(&moved, &mfeats).unwrap();
        for _ in 0..100 {
            let p = Vec3::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5, r.random::<f64>() - 0.5) * 0.8;
            let q = motion.apply(&p);
            for (o, m) in prepared.iter().zip(&mprep) {
                let (po, pm) = (o.camera.project(&p), m.camera.project(&q));
                proj_worst = proj_worst.max((po.u - pm.u).abs()).max((po.v - pm.v).abs()).max((po.depth - pm.depth).abs());
                match (pixel_token(o, &p), pixel_token(m, &q)) {
                    (Some(to), Some(tm)) => {
                        seen += 1;
                        token_worst = token_worst.max(max_abs_diff(&to[..c], &tm[..c]));
                        token_worst = token_worst.max(max_abs_diff(&to[2 * c..cw], &tm[2 * c..cw]));
                        let n = rot * Vec3::new(to[cw], to[cw + 1], to[cw + 2]);
                        token_worst = token_worst.max(max_abs_diff(n.as_slice(), &tm[cw..]));
                    }
                    (None, None) => {}
                    _ => return Err("visibility changed under rigid motion".into()),
                }
            }
        }
    }
    ensure!(proj_worst < 1e-5 && token_worst < 1e-5, "projective correspondence off by {proj_worst:e} / {token_worst:e}");

    // Whole network under a translation of scene, cameras and grid.
    let t = Vec3::new(0.3, -0.2, 0.15);
    let shift = Similarity::new(1.0, Mat3::identity(), t);
    let shifted = ViewSet::new(views.views.iter().map(|v| View { camera: v.camera.moved(&shift), ..v.clone() }).collect()).unwrap();
    let dense_shift = max_abs_diff(&a.values, &forward(&shifted, &bounds.translated(&t)).values);
    let mut moved_grid = grid.clone();
    moved_grid.spec.bounds = grid.spec.bounds.translated(&t);
    let sparse_shift = max_abs_diff(&sa.features, &sparse(&shifted, &moved_grid).features);
    ensure!(dense_shift < 1e-5 && sparse_shift < 1e-5, "translation changed outputs by {dense_shift:e} / {sparse_shift:e}");

    // Bit-determinism of the full pipeline, sequential and pooled.
    let cfg = PipelineConfig { occupancy: voxelmesh::config::OccupancyConfig { from_gt_sdf: true, ..Default::default() }, ..Default::default() };
    let toy = cfg.arch_config().map_err(|e| e.to_string())?;
    let tws = WeightStore::seeded(&toy, cfg.seed).unwrap();
    let fixture = sphere_views(6, 64);
    let gt = mesh_to_sdf(&Shape::Sphere.mesh(), &GridSpec::cubic(32, cfg.bounds()).unwrap()).unwrap();
    let run = |exec: &dyn voxelmesh_core::backbone::Executor| {
        pipeline::run(&cfg, &toy, &fixture, &tws, Some(&gt), exec, &mut Stopwatch::new()).map_err(|e| e.to_string())
    };
    let (r1, r2, r3) = (run(&Sequential)?, run(&Sequential)?, run(&RayonExecutor)?);
    ensure!(r1.mesh == r2.mesh && r1.mesh == r3.mesh && r1.checkpoint == r3.checkpoint, "pipeline reruns differ");
    ensure!(a.values == forward(&views, &bounds).values, "dense forward reruns differ");
    Ok(format!(
        "permutation {:.1e}; rigid projection {proj_worst:.1e}, tokens {token_worst:.1e} over {seen} hits; translation {:.1e}; reruns bit-identical",
        perm_dense.max(perm_sparse),
        dense_shift.max(sparse_shift)
    ))
}

// ---------------------------------------------------------------- 9 ----

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

fn triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = (b - a).cross(&(c - a));
    let proj = p - n * ((p - a).dot(&n) / n.norm_squared());
    let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (*v - *u).cross(&(proj - *u)).dot(&n) >= 0.0);
    if inside {
        (p - proj).norm()
    } else {
        segment_distance(p, a, b).min(segment_distance(p, b, c)).min(segment_distance(p, c, a))
    }
}

fn criterion_9() -> Outcome {
    let cube = Shape::Cube.mesh();
    let spec = GridSpec::cubic(32, Aabb::centered_cube(0.5)).unwrap();
    let sdf = mesh_to_sdf(&cube, &spec).map_err(|e| e.to_string())?;
    let pooled = voxelmesh::parallel::mesh_to_sdf(&cube, &spec).map_err(|e| e.to_string())?;
    ensure!(pooled == sdf, "pooled SDF differs from sequential");
    let mut r = rng(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let idx = r.random_range(0..spec.voxel_count());
        let [i, j, k] = spec.coords(idx);
        let p = spec.voxel_center(i, j, k);
        let dist = (0..cube.faces.len()).map(|f| {
            let [a, b, c] = cube.triangle(f);
            triangle_distance(&p, &a, &b, &c)
        });
        let unsigned = dist.fold(f64::INFINITY, f64::min);
        let inside = p.x.abs().max(p.y.abs()).max(p.z.abs()) < 0.28;
        let want = if inside { -unsigned } else { unsigned };
        worst = worst.max((sdf.values[idx] - want).abs());
    }
    ensure!(worst <= 1e-5, "SDF differs from brute force by {worst:e}");

    let vs = spec.min_voxel_size();
    let bands = [0.75 * vs, 1.5 * vs, 3.0 * vs];
    let occ: Vec<DenseVolume> = bands.iter().map(|b| occupancy_from_sdf(&sdf, *b).unwrap()).collect();
    let counts: Vec<usize> = occ.iter().map(|o| o.count_nonzero()).collect();
    for w in occ.windows(2) {
        ensure!(w[0].values.iter().zip(&w[1].values).all(|(a, b)| *a <= *b), "a wider band dropped a voxel");
    }
    ensure!(counts.windows(2).all(|c| c[0] < c[1]), "band counts {counts:?}");
    Ok(format!("200 voxels within {worst:.1e} of brute force; band counts {counts:?} nested"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("loss composition", criterion_1, Duration::from_secs(1)),
        ("cross-attention oracles", criterion_2, Duration::from_secs(1)),
        ("architecture audit and toy run", criterion_3, Duration::from_secs(60)),
        ("isosurface accuracy", criterion_4, Duration::from_secs(10)),
        ("gradient checks", criterion_5, Duration::from_secs(30)),
        ("geometry enhancement", criterion_6, Duration::from_secs(30)),
        ("evaluation protocol", criterion_7, Duration::from_secs(120)),
        ("invariance suite", criterion_8, Duration::from_secs(120)),
        ("SDF pipeline consistency", criterion_9, Duration::from_secs(60)),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *limit => Err(format!("{detail}; took {:.2} s, limit {} s", took.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} PASS [{name}] ({:.2} s): {detail}", i + 1, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL [{name}] ({:.2} s): {why}", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
