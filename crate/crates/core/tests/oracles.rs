//! Module behaviour checked against analytic scenes and independent
//! reference computations.

mod common;

use panoplane::curvature::{boundary_map, curvature_map, Differencing};
use panoplane::geom::{back_project, equirect_from_cubemap, CubeFace, CubeMap};
use panoplane::icosphere::{build_icosphere, derive_normals_from_depth, mesh_from_depth, sample_at_vertices};
use panoplane::loss::{
    berhu_threshold, loss_curvature, loss_depth, loss_normal, loss_plane, loss_total, LossConfig, PredictionSet,
    ScalePrediction, TargetMaps, TargetSet,
};
use panoplane::metrics::{depth_metrics, median_scale};
use panoplane::pipeline::{derive_gt, popup, PipelineConfig};
use panoplane::planefit::{fit_all, median_normal, FitConfig, SegmentStatus};
use panoplane::segmentation::{otsu_threshold, segment_planes, LabelMap, SegmentConfig};
use panoplane::synth::{make_room, render_cubemap, render_gt, BoxSpec, GroundTruth, SynthScene};
use panoplane::{EquirectGrid, FloatMap, Interp, Map, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DIMS: [f64; 3] = [4.0, 3.0, 5.0];
const OFFSET: [f64; 3] = [0.3, 0.2, -0.4];

fn room_scene(boxes: &[BoxSpec]) -> SynthScene {
    make_room(DIMS, OFFSET, boxes).unwrap()
}

fn render(scene: &SynthScene, h: usize) -> GroundTruth {
    render_gt(scene, &EquirectGrid::new(h).unwrap()).unwrap()
}

fn near_box() -> BoxSpec {
    BoxSpec {
        center: [1.1, 0.5],
        size: [0.9, 1.1, 0.9],
    }
}

fn derived_boundary(depth: &FloatMap) -> FloatMap {
    boundary_map(&curvature_map(
        &derive_normals_from_depth(depth, 7),
        Differencing::ArcLength,
    ))
}

/// Fraction of each predicted segment covered by its best true face.
fn precisions(truth: &LabelMap, pred: &LabelMap) -> Vec<f64> {
    (1..=pred.count())
        .map(|p| {
            let mut counts = vec![0usize; truth.count() as usize + 1];
            let mut size = 0;
            for (&t, &l) in truth.labels().iter().zip(pred.labels()) {
                if l == p {
                    counts[t as usize] += 1;
                    size += 1;
                }
            }
            *counts.iter().max().unwrap() as f64 / size as f64
        })
        .collect()
}

/// Plane residual of every mesh vertex against the wall its direction hits.
fn vertex_residuals(scene: &SynthScene, positions: &[Option<Vec3>], dirs: &[Vec3]) -> Vec<(f64, f64)> {
    positions
        .iter()
        .zip(dirs)
        .filter_map(|(p, v)| {
            let p = (*p)?;
            let (k, _) = scene.intersect(v)?;
            let plane = &scene.planes[k];
            Some(((plane.normal.dot(&p) + plane.distance).abs(), p.norm()))
        })
        .collect()
}

#[test]
fn back_projected_room_lies_on_its_walls() {
    let scene = room_scene(&[]);
    let gt = render(&scene, 64);
    let pts = back_project(&gt.depth).unwrap();
    for (i, p) in pts.values().iter().enumerate() {
        let plane = &scene.planes[gt.labels.labels()[i] as usize - 1];
        assert!((plane.normal.dot(p) + plane.distance).abs() < 1e-6);
    }
}

/// Face index by hand: largest absolute component and its sign.
fn major_axis_face(d: &Vec3) -> usize {
    let a = [d.x.abs(), d.y.abs(), d.z.abs()];
    let k = if a[0] >= a[1] && a[0] >= a[2] {
        0
    } else if a[1] >= a[2] {
        1
    } else {
        2
    };
    2 * k + usize::from(d[k] < 0.0)
}

#[test]
fn nearest_resampling_picks_the_pierced_face() {
    let n = 8;
    let faces: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64; n * n]).collect();
    let cube = CubeMap::new(n, faces).unwrap();
    let g = EquirectGrid::new(48).unwrap();
    let out = equirect_from_cubemap(&cube, &g, Interp::Nearest);
    for i in 0..g.len() {
        assert_eq!(out.values()[i], major_axis_face(&g.ray_at(i)) as f64, "pixel {i}");
    }
    let names: Vec<&str> = CubeFace::ALL.iter().map(|f| f.tag()).collect();
    assert_eq!(names, ["px", "nx", "py", "ny", "pz", "nz"]);
}

#[test]
fn bilinear_resampling_of_a_smooth_signal() {
    let f = |d: &Vec3| 0.5 + 0.3 * d.x + 0.2 * d.y * d.z - 0.1 * d.z;
    let h = 64;
    let size = (4.0 * h as f64 / std::f64::consts::PI).ceil() as usize;
    let cube = CubeMap::from_fn(size, |d| f(&d.normalize()));
    let g = EquirectGrid::new(h).unwrap();
    let out = equirect_from_cubemap(&cube, &g, Interp::Bilinear);
    let truth: Vec<f64> = (0..g.len()).map(|i| f(&g.ray_at(i))).collect();
    let range = truth.iter().cloned().fold(f64::MIN, f64::max) - truth.iter().cloned().fold(f64::MAX, f64::min);
    let rms = common::rms(out.values(), &truth);
    assert!(rms < 0.01 * range, "rms {rms} vs range {range}");
}

#[test]
fn vertex_sampling_of_sin_latitude() {
    let g = EquirectGrid::new(256).unwrap();
    let map = Map::from_fn(g, |row, _| g.latitude(row).sin());
    let mesh = build_icosphere(6);
    let samples = sample_at_vertices(&map, &mesh, Interp::Bilinear);
    for (v, s) in mesh.vertices().iter().zip(samples) {
        let s = s.unwrap();
        assert!((s - v.y).abs() < 1e-2, "vertex {v:?}: {s}");
    }
}

#[test]
fn floor_normals_point_up() {
    let g = EquirectGrid::new(512).unwrap();
    let height = 1.5;
    let mut depth = Map::from_fn(g, |row, _| {
        let s = g.latitude(row).sin();
        if s < 0.0 {
            -height / s
        } else {
            0.0
        }
    });
    for i in 0..g.len() {
        depth.mask_mut()[i] = g.latitude(g.row_col(i).0) < 0.0;
    }
    let normals = derive_normals_from_depth(&depth, 7);
    let mut worst = 0.0f64;
    for i in normals.valid_indices() {
        if g.latitude(g.row_col(i).0) < -10f64.to_radians() {
            worst = worst.max(common::angle_deg(&normals.values()[i], &Vec3::y()));
        }
    }
    assert!(worst < 0.5, "floor normals off by {worst}°");
}

#[test]
fn room_mesh_stays_within_the_chord_bound() {
    let scene = room_scene(&[]);
    let gt = render(&scene, 256);
    let level = 7;
    let mesh = mesh_from_depth(&gt.depth, None, level).unwrap();
    let residuals = vertex_residuals(&scene, &mesh.positions(), mesh.mesh.vertices());
    assert_eq!(residuals.len(), mesh.mesh.vertex_count());
    for (res, r) in residuals {
        let bound = 2.0 * r * std::f64::consts::PI / (2f64.powi(level as i32) * 5.0);
        assert!(res <= bound, "residual {res} above {bound}");
    }
}

#[test]
fn creases_stand_out_of_planes() {
    let gt = render(&room_scene(&[]), 256);
    let boundary = derived_boundary(&gt.depth);
    let off = common::off_edge(&gt.labels, 2);
    let mut planar: Vec<f64> = boundary
        .valid_indices()
        .into_iter()
        .filter(|&i| off[i])
        .map(|i| boundary.values()[i])
        .collect();
    planar.sort_by(f64::total_cmp);
    let median = planar[planar.len() / 2];
    for i in boundary.valid_indices() {
        if gt.boundary.values()[i] == 1.0 {
            assert!(
                boundary.values()[i] > 10.0 * median,
                "edge pixel {i}: {}",
                boundary.values()[i]
            );
        }
    }
}

#[test]
fn otsu_split_covers_every_edge() {
    let gt = render(&room_scene(&[]), 256);
    let boundary = derived_boundary(&gt.depth);
    let split = otsu_threshold(&boundary, 256).unwrap();
    let g = gt.depth.grid();
    let high = |k: usize| boundary.is_valid(k) && !split.is_below(boundary.values()[k]);
    // Analytic edges sit between 4-adjacent pixels with different labels.
    let (mut pairs, mut hit) = (0, 0);
    for i in 0..g.len() {
        for j in g.neighbors4(i, true).filter(|&j| j > i) {
            if gt.labels.labels()[i] != gt.labels.labels()[j] {
                pairs += 1;
                hit += usize::from(high(i) || high(j));
            }
        }
    }
    assert!(hit as f64 >= 0.95 * pairs as f64, "{hit}/{pairs} edges covered");
}

#[test]
fn uniform_errors_give_a_fifth_knee() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let errors: Vec<f64> = (0..1_000_000).map(|_| r.random_range(-1.0..1.0)).collect();
    let t = berhu_threshold(&errors, 0.2).unwrap();
    assert!((t - 0.2).abs() < 1e-4, "T = {t}");
}

#[test]
fn loss_total_matches_hand_sum() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let full = EquirectGrid::new(8).unwrap();
    let half = full.halved().unwrap();
    let unit = |r: &mut ChaCha8Rng| {
        Vec3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        )
        .normalize()
    };
    let pred = |g: EquirectGrid, r: &mut ChaCha8Rng| ScalePrediction {
        depth: Map::from_fn(g, |_, _| r.random_range(0.5..5.0)),
        normals: Map::from_fn(g, |_, _| unit(r)),
        boundary: Some(Map::from_fn(g, |_, _| r.random_range(0.01..2.0))),
    };
    let preds = PredictionSet {
        scales: [pred(half, &mut r), pred(full, &mut r)],
    };
    let targets = TargetSet::from_full_resolution(TargetMaps {
        depth: Map::from_fn(full, |_, _| r.random_range(0.5..5.0)),
        normals: Map::from_fn(full, |_, _| unit(&mut r)),
        boundary: Map::from_fn(full, |_, _| r.random_range(0.0..2.0)),
    })
    .unwrap();
    let cfg = LossConfig {
        gamma: [0.2, 0.3],
        ..Default::default()
    };
    let out = loss_total(&preds, &targets, &cfg).unwrap();
    let mut hand = 0.0;
    for s in 0..2 {
        let (p, t) = (&preds.scales[s], &targets.scales[s]);
        let f = cfg.berhu_fraction;
        let lz = loss_depth(&p.depth, &t.depth, &t.boundary, f).unwrap();
        let ln = loss_normal(&p.normals, &t.normals, &t.boundary).unwrap();
        let lc = loss_curvature(p.boundary.as_ref().unwrap(), &t.boundary, cfg.eta, f).unwrap();
        let ld = loss_plane(&p.depth, &p.normals, &t.depth, &t.normals, &t.boundary, f).unwrap();
        hand += cfg.alpha[s] * lz.value + cfg.beta[s] * ln.value + cfg.gamma[s] * lc.value + cfg.zeta[s] * ld.value;
        let gz = &out.gradients[s].depth;
        for (k, g) in gz.iter().enumerate() {
            let want = cfg.alpha[s] * lz.grad[k] + cfg.zeta[s] * ld.grad_depth[k];
            assert!((g - want).abs() < 1e-12);
        }
    }
    assert!((out.total - hand).abs() < 1e-12, "{} vs {hand}", out.total);
}

#[test]
fn median_scaling_beats_scale_probes() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let g = EquirectGrid::new(32).unwrap();
    let all = vec![true; g.len()];
    for _ in 0..20 {
        let gt = Map::from_fn(g, |_, _| r.random_range(0.5..10.0));
        let pred = Map::from_fn(g, |row, col| {
            let z = *gt.get(row, col).unwrap();
            2.7 * z * (1.0 + r.random_range(-0.1..0.1) * z / 10.0)
        });
        let scaled = median_scale(&pred, &gt, &all).unwrap();
        let best = depth_metrics(&scaled, &gt, &all).unwrap().abs_rel;
        for k in [0.5, 2.0] {
            let probe = depth_metrics(&scaled.map(|v| v * k), &gt, &all).unwrap().abs_rel;
            assert!(best <= probe, "{best} vs {probe} at k = {k}");
        }
    }
}

#[test]
fn otsu_on_six_values_matches_exhaustive_split() {
    let g = EquirectGrid::new(6).unwrap();
    let map = Map::from_fn(g, |row, col| ((row * g.width() + col) % 6 + 1) as f64);
    let split = otsu_threshold(&map, 256).unwrap();
    let values: Vec<f64> = map.values().to_vec();
    // Every cut of the 256 bins induces a split of the values; maximise the
    // between-class variance over all of them.
    let mut best = (f64::MIN, 0.0);
    for t in 0..255 {
        let edge = 1.0 + (t + 1) as f64 * 5.0 / 256.0;
        let (lo, hi): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| v < edge);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
        let (m0, m1) = (
            lo.iter().sum::<f64>() / lo.len() as f64,
            hi.iter().sum::<f64>() / hi.len() as f64,
        );
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best.0 + 1e-12 {
            best = (var, edge);
        }
    }
    for &v in &values {
        assert_eq!(split.is_below(v), v < best.1, "value {v}");
    }
    assert!(split.is_below(3.0) && !split.is_below(4.0));
}

#[test]
fn room_segments_from_derived_boundary() {
    let gt = render(&room_scene(&[]), 256);
    let labels = segment_planes(&derived_boundary(&gt.depth), &SegmentConfig::default()).unwrap();
    assert_eq!(labels.count(), 6);
    assert!(precisions(&gt.labels, &labels).iter().all(|&p| p >= 0.9));
    assert!(common::best_jaccards(&gt.labels, &labels).iter().all(|&j| j >= 0.9));
}

#[test]
fn room_with_box_segments_into_nine_planes() {
    let gt = render(&room_scene(&[near_box()]), 256);
    let visible = (1..=gt.labels.count())
        .filter(|&k| gt.labels.labels().contains(&k))
        .count();
    assert_eq!(visible, 9);
    let labels = segment_planes(&gt.boundary, &SegmentConfig::default()).unwrap();
    assert_eq!(labels.count(), 9);
    let p = precisions(&gt.labels, &labels);
    assert!(p.iter().all(|&v| v >= 0.9), "{p:?}");
}

#[test]
fn median_normal_under_cone_noise() {
    for seed in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let truth = Vec3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        )
        .normalize();
        let noise = Normal::new(0.0, 5f64.to_radians()).unwrap();
        let g = EquirectGrid::new(23).unwrap();
        // Perturb by a Gaussian angle about a random axis perpendicular to n*.
        let normals = Map::from_fn(g, |_, _| {
            let axis = truth
                .cross(&Vec3::new(
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                ))
                .normalize();
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), noise.sample(&mut r));
            rot * truth
        });
        let pixels: Vec<usize> = (0..1000).collect();
        let m = median_normal(&pixels, &normals).unwrap();
        assert!(
            common::angle_deg(&m, &truth) < 1.0,
            "seed {seed}: {}°",
            common::angle_deg(&m, &truth)
        );
    }
}

fn noisy(depth: &FloatMap, sigma: f64, seed: u64) -> FloatMap {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    Map::from_values(
        *depth.grid(),
        depth.values().iter().map(|z| z + n.sample(&mut r)).collect(),
    )
    .unwrap()
}

#[test]
fn popup_mesh_on_exact_and_noisy_rooms() {
    let scene = room_scene(&[]);
    let gt = render(&scene, 256);
    let cfg = PipelineConfig::default();
    let out = popup(Some(&gt.rgb), &gt.depth, &gt.normals, &gt.boundary, &cfg).unwrap();
    assert_eq!(out.fit.records().len(), 6);
    let dirs = out.mesh.mesh.vertices().to_vec();
    for (res, r) in vertex_residuals(&scene, &out.mesh.positions(), &dirs) {
        assert!(res <= 2.0 * r * std::f64::consts::PI / (128.0 * 5.0));
    }

    let depth = noisy(&gt.depth, 0.05, 4);
    let out = popup(Some(&gt.rgb), &depth, &gt.normals, &gt.boundary, &cfg).unwrap();
    let raw = mesh_from_depth(&depth, None, cfg.ico_level).unwrap();
    let rms = |pos: &[Option<Vec3>]| {
        let r: Vec<f64> = vertex_residuals(&scene, pos, &dirs).into_iter().map(|x| x.0).collect();
        (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
    };
    let (after, before) = (rms(&out.mesh.positions()), rms(&raw.positions()));
    assert!(after <= 0.5 * before, "mesh residual RMS {after} vs raw {before}");
}

#[test]
fn misfit_segments_keep_raw_depth() {
    let gt = render(&room_scene(&[]), 32);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let junk = Map::from_fn(*gt.depth.grid(), |_, _| r.random_range(0.5..6.0));
    let out = fit_all(&gt.labels, &junk, &gt.normals, &FitConfig::default()).unwrap();
    assert!(out.planes.iter().all(|p| p.status == SegmentStatus::Rejected));
    assert_eq!(out.adjusted.values(), junk.values());
}

#[test]
fn baked_room_cube_reproduces_ground_truth() {
    let scene = room_scene(&[]);
    let (depth_cube, rgb_cube) = render_cubemap(&scene, 1024).unwrap();
    let g = EquirectGrid::new(256).unwrap();
    let out = derive_gt(&depth_cube, Some(&rgb_cube), &g, &PipelineConfig::default()).unwrap();
    let gt = render_gt(&scene, &g).unwrap();

    let n = depth_cube.face_size();
    for i in 0..g.len() {
        let ray = g.ray_at(i);
        let (face, row, col) = depth_cube.nearest_texel(&ray);
        assert_eq!(out.depth.values()[i], depth_cube.face(face)[row * n + col]);
        // The ray pierces the face plane inside the chosen texel's cell.
        assert_eq!(face as usize, major_axis_face(&ray));
        let centre = depth_cube.texel_direction(face, row, col);
        let axis = face as usize / 2;
        let hit = ray / ray[axis].abs();
        assert!((hit - centre).amax() <= 1.0 / n as f64 + 1e-12, "pixel {i}");
    }

    let off = common::off_edge(&gt.labels, 2);
    for i in out.normals.valid_indices().into_iter().filter(|&i| off[i]) {
        let a = common::angle_deg(&out.normals.values()[i], &gt.normals.values()[i]);
        assert!(a < 1.0, "pixel {i}: {a}°");
    }

    // Detected creases lie within 2 px of a true transition.
    let split = otsu_threshold(&out.boundary, 256).unwrap();
    for i in out.boundary.valid_indices() {
        if !split.is_below(out.boundary.values()[i]) {
            assert!(!off[i], "crease at pixel {i} far from any edge");
        }
    }
}

#[test]
fn derived_normals_match_a_furnished_room() {
    let scene = room_scene(&[near_box()]);
    let gt = render(&scene, 128);
    let normals = derive_normals_from_depth(&gt.depth, 6);
    let off = common::off_edge(&gt.labels, 2);
    let idx: Vec<usize> = normals.valid_indices().into_iter().filter(|&i| off[i]).collect();
    let good = idx
        .iter()
        .filter(|&&i| common::angle_deg(&normals.values()[i], &gt.normals.values()[i]) < 1.0)
        .count();
    assert!(good as f64 >= 0.95 * idx.len() as f64, "{good}/{}", idx.len());
}
