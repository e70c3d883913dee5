mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use panoplane::curvature::{boundary_map, curvature_map, principal_curvatures, Differencing, SecondForm};
use panoplane::geom::{
    back_project, direction_to_lat_lon, equirect_from_cubemap, geodesic_map, lat_lon_to_direction, CubeMap,
};
use panoplane::icosphere::derive_normals_from_depth;
use panoplane::loss::{
    berhu, loss_curvature, loss_depth, loss_normal, loss_plane, loss_total, LossConfig, PredictionSet, ScalePrediction,
    TargetMaps, TargetSet,
};
use panoplane::metrics::{depth_metrics, median_scale, normal_metrics};
use panoplane::planefit::{fit_all, ransac_distance, FitConfig, RansacConfig, SegmentStatus};
use panoplane::segmentation::{segment_planes, SegmentConfig};
use panoplane::synth::{make_room, render_gt, BoxSpec};
use panoplane::{EquirectGrid, FloatMap, Interp, Map, Vec3, Vec3Map};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(r: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn scalar_map(g: EquirectGrid, r: &mut ChaCha8Rng, lo: f64, hi: f64) -> FloatMap {
    Map::from_fn(g, |_, _| r.random_range(lo..hi))
}

fn unit_map(g: EquirectGrid, r: &mut ChaCha8Rng) -> Vec3Map {
    Map::from_fn(g, |_, _| unit(r))
}

fn with_mask<T: Clone>(m: &Map<T>, mask: &[bool]) -> Map<T> {
    Map::new(*m.grid(), m.values().to_vec(), mask.to_vec()).unwrap()
}

fn room_gt(h: usize, boxes: &[BoxSpec]) -> panoplane::synth::GroundTruth {
    let scene = make_room([4.0, 3.0, 5.0], [0.3, 0.2, -0.4], boxes).unwrap();
    render_gt(&scene, &EquirectGrid::new(h).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn lat_lon_round_trip(lat in -FRAC_PI_2 + 1e-6..FRAC_PI_2 - 1e-6, lon in -PI + 1e-9..PI) {
        let (a, b) = direction_to_lat_lon(&lat_lon_to_direction(lat, lon));
        prop_assert!((a - lat).abs() < 1e-12 && (b - lon).abs() < 1e-12);
    }

    #[test]
    fn rays_recover_geodesic_map(h in 1usize..40) {
        let g = EquirectGrid::new(h).unwrap();
        let geo = geodesic_map(&g);
        for i in 0..g.len() {
            let (lat, lon) = direction_to_lat_lon(&g.ray_at(i));
            let want = geo.values()[i];
            prop_assert!((lat - want.x).abs() < 1e-12 && (lon - want.y).abs() < 1e-12);
        }
    }

    #[test]
    fn back_project_norm_is_depth(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = EquirectGrid::new(8).unwrap();
        let depth = scalar_map(g, &mut r, 0.01, 100.0);
        let pts = back_project(&depth).unwrap();
        for (p, z) in pts.values().iter().zip(depth.values()) {
            prop_assert!((p.norm() - z).abs() <= 4.0 * f64::EPSILON * z);
        }
    }

    #[test]
    fn nearest_resampling_commutes_with_relabelling(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let size = 6;
        let faces: Vec<Vec<f64>> = (0..6).map(|_| (0..size * size).map(|_| r.random_range(0..50) as f64).collect()).collect();
        let cube = CubeMap::new(size, faces.clone()).unwrap();
        let relabel = |v: f64| (v * 7.0 + 3.0) % 50.0;
        let relabelled = CubeMap::new(size, faces.iter().map(|f| f.iter().map(|&v| relabel(v)).collect()).collect()).unwrap();
        let g = EquirectGrid::new(12).unwrap();
        let a = equirect_from_cubemap(&cube, &g, Interp::Nearest);
        let b = equirect_from_cubemap(&relabelled, &g, Interp::Nearest);
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert_eq!(relabel(*x), *y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derived_normals_face_the_camera(seed in any::<u64>(), level in 2u32..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = EquirectGrid::new(16).unwrap();
        let base = r.random_range(0.5..5.0);
        let depth = Map::from_fn(g, |row, col| base * (1.0 + 0.3 * ((row + 2 * col) as f64 * 0.3).sin()) + r.random_range(0.0..0.05));
        let n = derive_normals_from_depth(&depth, level);
        for i in n.valid_indices() {
            let v = n.values()[i];
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            prop_assert!(v.dot(&g.ray_at(i)) < 0.0, "pixel {} faces away", i);
        }
    }
}

proptest! {
    #[test]
    fn curvature_invariants(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64) {
        let f = SecondForm { a, b, c };
        let (k1, k2) = principal_curvatures(&f);
        prop_assert!(k1 >= k2);
        let scale = 1.0 + a.abs() + b.abs() + c.abs();
        prop_assert!((k1 + k2 - (a + c)).abs() < 1e-12 * scale);
        prop_assert!((k1 * k2 - (a * c - b * b)).abs() < 1e-12 * scale * scale);
        let norm = k1.hypot(k2);
        // Negating u gives (−A, −B, C); negating v gives (A, B, −C).
        for g in [SecondForm { a: -a, b: -b, c }, SecondForm { a, b, c: -c }] {
            let (m1, m2) = principal_curvatures(&g);
            prop_assert!((m1.hypot(m2) - norm).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn constant_normals_have_no_curvature(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
        prop_assume!(Vec3::new(x, y, z).norm() > 0.1);
        let g = EquirectGrid::new(8).unwrap();
        let n = Map::filled(g, Vec3::new(x, y, z).normalize());
        for mode in [Differencing::ArcLength, Differencing::RawPixel] {
            let b = boundary_map(&curvature_map(&n, mode));
            prop_assert!(b.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn berhu_is_continuous_at_the_knee(t in 1e-3..1e3f64, frac in 1e-6..0.999f64) {
        let eps = frac * t;
        let hi = berhu(t + eps, t).unwrap().0;
        let lo = berhu(t - eps, t).unwrap().0;
        prop_assert!((hi - lo).abs() <= 2.0 * eps * (1.0 + eps / (2.0 * t)) * (1.0 + 1e-12));
    }

    #[test]
    fn losses_are_finite_and_ignore_masked_pixels(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = EquirectGrid::new(6).unwrap();
        let z = scalar_map(g, &mut r, 0.5, 5.0);
        let zt = scalar_map(g, &mut r, 0.5, 5.0);
        let c = scalar_map(g, &mut r, 0.0, 2.0);
        let cp = scalar_map(g, &mut r, 0.01, 2.0);
        let n = unit_map(g, &mut r);
        let nt = unit_map(g, &mut r);
        let mut mask: Vec<bool> = (0..g.len()).map(|_| r.random::<f64>() > 0.3).collect();
        mask[0] = true;
        let masked: Vec<usize> = (0..g.len()).filter(|&i| !mask[i]).collect();

        // Garbage in masked pixels must not matter.
        let mut zg = z.clone();
        for &i in &masked {
            zg.values_mut()[i] = 1e6;
        }
        let zm = with_mask(&z, &mask);
        let zgm = with_mask(&zg, &mask);
        let d1 = loss_depth(&zm, &zt, &c, 0.2).unwrap();
        let d2 = loss_depth(&zgm, &zt, &c, 0.2).unwrap();
        prop_assert!(d1.value.is_finite());
        prop_assert_eq!(d1.value, d2.value);
        prop_assert!(masked.iter().all(|&i| d1.grad[i] == 0.0));

        let nm = with_mask(&n, &mask);
        let nl = loss_normal(&nm, &nt, &c).unwrap();
        prop_assert!(nl.value.is_finite());
        prop_assert!(masked.iter().all(|&i| nl.grad[i] == Vec3::zeros()));

        let cm = with_mask(&cp, &mask);
        let cl = loss_curvature(&cm, &c, 0.1, 0.2).unwrap();
        prop_assert!(cl.value.is_finite());
        prop_assert!(masked.iter().all(|&i| cl.grad[i] == 0.0));

        let pl = loss_plane(&zm, &n, &zt, &nt, &c, 0.2).unwrap();
        let pg = loss_plane(&zgm, &n, &zt, &nt, &c, 0.2).unwrap();
        prop_assert!(pl.value.is_finite());
        prop_assert_eq!(pl.value, pg.value);
        prop_assert!(masked.iter().all(|&i| pl.grad_depth[i] == 0.0 && pl.grad_normals[i] == Vec3::zeros()));
    }

    #[test]
    fn loss_total_is_linear_in_alpha(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let full = EquirectGrid::new(8).unwrap();
        let half = full.halved().unwrap();
        let maps = |g: EquirectGrid, r: &mut ChaCha8Rng| ScalePrediction {
            depth: scalar_map(g, r, 0.5, 5.0),
            normals: unit_map(g, r),
            boundary: Some(scalar_map(g, r, 0.01, 2.0)),
        };
        let preds = PredictionSet { scales: [maps(half, &mut r), maps(full, &mut r)] };
        let targets = TargetSet::from_full_resolution(TargetMaps {
            depth: scalar_map(full, &mut r, 0.5, 5.0),
            normals: unit_map(full, &mut r),
            boundary: scalar_map(full, &mut r, 0.0, 2.0),
        })
        .unwrap();
        let cfg = LossConfig::default();
        let doubled = LossConfig { alpha: [cfg.alpha[0], 2.0 * cfg.alpha[1]], ..cfg };
        let a = loss_total(&preds, &targets, &cfg).unwrap();
        let b = loss_total(&preds, &targets, &doubled).unwrap();
        let lz = a.terms[1].depth;
        prop_assert_eq!(a.terms, b.terms);
        prop_assert!(((b.total - a.total) - cfg.alpha[1] * lz).abs() <= 1e-12 * (1.0 + a.total.abs()));
        for (ga, gb) in a.gradients[1].depth.iter().zip(&b.gradients[1].depth) {
            prop_assert!(ga.is_finite() && gb.is_finite());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_scale_and_permutation(seed in any::<u64>(), k in 0.01..100.0f64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = EquirectGrid::new(8).unwrap();
        let gt = scalar_map(g, &mut r, 0.5, 10.0);
        let pred = Map::from_fn(g, |row, col| gt.get(row, col).unwrap() * r.random_range(0.5..2.0));
        let all = vec![true; g.len()];
        let m = depth_metrics(&median_scale(&pred, &gt, &all).unwrap(), &gt, &all).unwrap();
        let ms = depth_metrics(&median_scale(&pred.map(|v| v * k), &gt, &all).unwrap(), &gt, &all).unwrap();
        prop_assert_eq!([m.delta1, m.delta2, m.delta3], [ms.delta1, ms.delta2, ms.delta3]);
        for (a, b) in [(m.abs_rel, ms.abs_rel), (m.rms_lin, ms.rms_lin), (m.rms_log, ms.rms_log)] {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        // δ is symmetric in the two maps, AbsRel is not.
        let raw = depth_metrics(&pred, &gt, &all).unwrap();
        let swapped = depth_metrics(&gt, &pred, &all).unwrap();
        prop_assert_eq!([raw.delta1, raw.delta2, raw.delta3], [swapped.delta1, swapped.delta2, swapped.delta3]);
        prop_assert!((raw.abs_rel - swapped.abs_rel).abs() > 1e-9);

        let mut perm: Vec<usize> = (0..g.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let shuffle = |m: &FloatMap| Map::from_values(g, perm.iter().map(|&i| m.values()[i]).collect()).unwrap();
        let mp = depth_metrics(&shuffle(&pred), &shuffle(&gt), &all).unwrap();
        for (a, b) in [(raw.abs_rel, mp.abs_rel), (raw.sq_rel, mp.sq_rel), (raw.rms_lin, mp.rms_lin), (raw.rms_log, mp.rms_log)] {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        prop_assert_eq!([raw.delta1, raw.delta2, raw.delta3], [mp.delta1, mp.delta2, mp.delta3]);

        let pn = unit_map(g, &mut r);
        let gn = unit_map(g, &mut r);
        let shuffle3 = |m: &Vec3Map| Map::from_values(g, perm.iter().map(|&i| m.values()[i]).collect()).unwrap();
        let a = normal_metrics(&pn, &gn, &all).unwrap();
        let b = normal_metrics(&shuffle3(&pn), &shuffle3(&gn), &all).unwrap();
        prop_assert!((a.mean_angle - b.mean_angle).abs() < 1e-10);
        prop_assert_eq!(a.frac_under, b.frac_under);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn segments_are_connected_and_scale_invariant(seed in any::<u64>(), j in -8i32..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = EquirectGrid::new(16).unwrap();
        // Smooth blobs with sharp ridges.
        let (a, b) = (r.random_range(0.2..1.0), r.random_range(0.2..1.0));
        let boundary = Map::from_fn(g, |row, col| {
            let v = ((row as f64 * a).sin() * (col as f64 * b).cos()).abs();
            if v > 0.8 { 5.0 + v } else { v * 0.1 }
        });
        let cfg = SegmentConfig { min_size: 3, ..Default::default() };
        let labels = segment_planes(&boundary, &cfg).unwrap();
        for k in 1..=labels.count() {
            let mask: Vec<bool> = labels.labels().iter().map(|&l| l == k).collect();
            let refill = common::flood_fill(&mask, g.width(), g.height(), true);
            prop_assert_eq!(refill.iter().copied().max(), Some(1), "segment {} is not connected", k);
        }
        // Power-of-two scaling keeps every bin edge comparison bit-exact.
        let scaled = boundary.map(|v| v * 2f64.powi(j));
        prop_assert_eq!(segment_planes(&scaled, &cfg).unwrap(), labels);
    }

    #[test]
    fn ransac_ignores_pixel_order(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = EquirectGrid::new(16).unwrap();
        let n = unit(&mut r);
        let pixels: Vec<usize> = (0..g.len()).filter(|&i| n.dot(&g.ray_at(i)) < -0.2).collect();
        prop_assume!(pixels.len() > 10);
        let depth = Map::from_fn(g, |row, col| {
            let cos = n.dot(&g.ray(row, col));
            if cos < -0.2 && r.random::<f64>() < 0.8 { -1.5 / cos + r.random_range(-0.01..0.01) } else { r.random_range(0.5..6.0) }
        });
        let cfg = RansacConfig { seed, ..Default::default() };
        let (d, inliers) = ransac_distance(&pixels, &depth, &n, &cfg).unwrap();
        let mut shuffled = pixels.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, r.random_range(0..=i));
        }
        let (d2, inliers2) = ransac_distance(&shuffled, &depth, &n, &cfg).unwrap();
        prop_assert_eq!(d, d2);
        prop_assert_eq!(&inliers, &inliers2);
        let offsets: Vec<f64> = inliers.iter().map(|&i| n.dot(&(g.ray_at(i) * depth.values()[i]))).collect();
        let mean = -offsets.iter().sum::<f64>() / offsets.len() as f64;
        prop_assert!((d - mean).abs() < 1e-12);
    }

    #[test]
    fn fitted_pixels_lie_on_their_plane(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let gt = room_gt(32, &[]);
        let noisy = Map::from_values(*gt.depth.grid(), gt.depth.values().iter().map(|z| z + r.random_range(-0.05..0.05)).collect()).unwrap();
        let fit = fit_all(&gt.labels, &noisy, &gt.normals, &FitConfig::default()).unwrap();
        let g = gt.depth.grid();
        for p in fit.planes.iter().filter(|p| p.status == SegmentStatus::Projected) {
            for &i in &p.pixels {
                if fit.grazing[i] {
                    continue;
                }
                let x = g.ray_at(i) * fit.adjusted.values()[i];
                prop_assert!((p.normal.dot(&x) + p.distance).abs() < 1e-9);
            }
        }
        // Projection never increases the residual to the fitted planes.
        for p in fit.planes.iter().filter(|p| p.status == SegmentStatus::Projected) {
            let res = |m: &FloatMap| p.pixels.iter().map(|&i| (p.normal.dot(&(g.ray_at(i) * m.values()[i])) + p.distance).powi(2)).sum::<f64>();
            prop_assert!(res(&fit.adjusted) <= res(&noisy));
        }
    }

    #[test]
    fn rendered_rooms_satisfy_their_planes(x in -1.5..1.5f64, y in -1.2..1.2f64, z in -2.0..2.0f64, boxed in any::<bool>()) {
        let boxes = if boxed { vec![BoxSpec { center: [1.2, 1.5], size: [0.6, 0.8, 0.5] }] } else { vec![] };
        let scene = match make_room([4.0, 3.0, 5.0], [x, y, z], &boxes) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let g = EquirectGrid::new(24).unwrap();
        let gt = render_gt(&scene, &g).unwrap();
        for i in 0..g.len() {
            let plane = &scene.planes[gt.labels.labels()[i] as usize - 1];
            let p = g.ray_at(i) * gt.depth.values()[i];
            prop_assert!((gt.normals.values()[i].dot(&p) + plane.distance).abs() < 1e-9);
            prop_assert!(gt.normals.values()[i].dot(&g.ray_at(i)) < 0.0);
        }
    }
}
