//! Central finite-difference validation of the analytic loss gradients.
//!
//! Each check draws random maps, picks random valid pixels (and a random
//! component for vector inputs), perturbs the input by `±step` and compares
//! the difference quotient of the loss *value* with the analytic gradient.
//! Pixels sitting within `margin` of a non-differentiable locus are redrawn:
//! the BerHu knee `|e| = T`, `e = 0`, `c = 0`, and pixels whose error is close
//! to the maximum (they move `T` itself).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_baseline, loss_curvature, loss_depth, loss_normal, loss_plane};
use crate::geom::{EquirectGrid, FloatMap, Map, Vec3, Vec3Map};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    /// Gradient entries compared per term.
    pub samples: usize,
    pub step: f64,
    /// Distance from non-smooth loci below which a sample is redrawn.
    pub margin: f64,
    pub seed: u64,
    /// Height of the random maps; width is twice this.
    pub height: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            step: 1e-5,
            margin: 1e-3,
            seed: 0,
            height: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub term: String,
    pub max_rel_err: f64,
    pub samples: usize,
}

/// `|a − f| / max(|a|, |f|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

struct Instance {
    grid: EquirectGrid,
    z: FloatMap,
    z_gt: FloatMap,
    n: Vec3Map,
    n_gt: Vec3Map,
    c: FloatMap,
    c_gt: FloatMap,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, height: usize) -> Result<Self> {
        let grid = EquirectGrid::new(height)?;
        let len = grid.len();
        let mask: Vec<bool> = (0..len).map(|_| rng.random_bool(0.9)).collect();
        let mut scalar = |lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.random_range(lo..hi)).collect() };
        let z_gt_values = scalar(1.0, 5.0);
        let offsets = scalar(-1.0, 1.0);
        let c_gt_values = scalar(0.0, 2.0);
        let c_values = scalar(0.05, 2.0);
        let z_values: Vec<f64> = z_gt_values.iter().zip(&offsets).map(|(a, b)| a + b).collect();
        let n_gt_values: Vec<Vec3> = (0..len).map(|_| random_unit(rng)).collect();
        let n_values: Vec<Vec3> = (0..len)
            .map(|_| random_unit(rng) * rng.random_range(0.5..1.5))
            .collect();
        Ok(Self {
            grid,
            z: Map::new(grid, z_values, mask.clone())?,
            z_gt: Map::from_values(grid, z_gt_values)?,
            n: Map::from_values(grid, n_values)?,
            n_gt: Map::from_values(grid, n_gt_values)?,
            c: Map::from_values(grid, c_values)?,
            c_gt: Map::from_values(grid, c_gt_values)?,
        })
    }
}

fn perturbed_scalar(map: &FloatMap, i: usize, delta: f64) -> FloatMap {
    let mut m = map.clone();
    m.values_mut()[i] += delta;
    m
}

fn perturbed_vector(map: &Vec3Map, i: usize, axis: usize, delta: f64) -> Vec3Map {
    let mut m = map.clone();
    m.values_mut()[i][axis] += delta;
    m
}

/// True when `e` is clear of the BerHu knee, zero and the T-defining maximum.
fn smooth_berhu_error(e: f64, t: f64, max_abs: f64, margin: f64) -> bool {
    let a = e.abs();
    a > margin && (a - t).abs() > margin && a < max_abs - margin
}

struct Accumulator {
    term: &'static str,
    max_rel_err: f64,
    samples: usize,
}

impl Accumulator {
    fn new(term: &'static str) -> Self {
        Self {
            term,
            max_rel_err: 0.0,
            samples: 0,
        }
    }

    fn push(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_err = self.max_rel_err.max(relative_error(analytic, numeric));
        self.samples += 1;
    }

    fn report(self) -> GradCheckReport {
        GradCheckReport {
            term: self.term.to_string(),
            max_rel_err: self.max_rel_err,
            samples: self.samples,
        }
    }
}

const PIXELS_PER_INSTANCE: usize = 50;

/// Runs the gradient checks for every loss term.
pub fn run_gradient_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let f = 0.2;
    let eta = 0.1;

    let mut depth = Accumulator::new("depth");
    let mut normal = Accumulator::new("normal");
    let mut curvature = Accumulator::new("curvature");
    let mut plane_depth = Accumulator::new("plane_depth");
    let mut plane_normal = Accumulator::new("plane_normal");
    let mut baseline = Accumulator::new("baseline");

    let mut guard = 0usize;
    while [&depth, &normal, &curvature, &plane_depth, &plane_normal, &baseline]
        .iter()
        .any(|a| a.samples < opts.samples)
    {
        guard += 1;
        if guard > 100 * (opts.samples / PIXELS_PER_INSTANCE + 1) {
            break;
        }
        let inst = Instance::random(&mut rng, opts.height)?;
        let valid = inst.z.valid_indices();
        let pick = |rng: &mut ChaCha8Rng| valid[rng.random_range(0..valid.len())];

        // Depth term.
        let base = loss_depth(&inst.z, &inst.z_gt, &inst.c_gt, f)?;
        let errs: Vec<f64> = valid
            .iter()
            .map(|&i| inst.z.values()[i] - inst.z_gt.values()[i])
            .collect();
        let max_abs = errs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        for _ in 0..PIXELS_PER_INSTANCE {
            if depth.samples >= opts.samples {
                break;
            }
            let i = pick(&mut rng);
            let e = inst.z.values()[i] - inst.z_gt.values()[i];
            if !smooth_berhu_error(e, base.threshold, max_abs, opts.margin) {
                continue;
            }
            let plus = loss_depth(&perturbed_scalar(&inst.z, i, h), &inst.z_gt, &inst.c_gt, f)?.value;
            let minus = loss_depth(&perturbed_scalar(&inst.z, i, -h), &inst.z_gt, &inst.c_gt, f)?.value;
            depth.push(base.grad[i], (plus - minus) / (2.0 * h));
        }

        // Normal term (smooth everywhere away from a zero raw normal).
        let base_n = loss_normal(&inst.n, &inst.n_gt, &inst.c_gt)?;
        for _ in 0..PIXELS_PER_INSTANCE {
            if normal.samples >= opts.samples {
                break;
            }
            let i = rng.random_range(0..inst.grid.len());
            let axis = rng.random_range(0..3);
            let plus = loss_normal(&perturbed_vector(&inst.n, i, axis, h), &inst.n_gt, &inst.c_gt)?.value;
            let minus = loss_normal(&perturbed_vector(&inst.n, i, axis, -h), &inst.n_gt, &inst.c_gt)?.value;
            normal.push(base_n.grad[i][axis], (plus - minus) / (2.0 * h));
        }

        // Boundary term.
        let base_c = loss_curvature(&inst.c, &inst.c_gt, eta, f)?;
        let c_errs: Vec<f64> = (0..inst.grid.len())
            .map(|i| inst.c.values()[i] - inst.c_gt.values()[i])
            .collect();
        let c_max = c_errs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        for _ in 0..PIXELS_PER_INSTANCE {
            if curvature.samples >= opts.samples {
                break;
            }
            let i = rng.random_range(0..inst.grid.len());
            if !smooth_berhu_error(c_errs[i], base_c.threshold, c_max, opts.margin) || inst.c.values()[i] <= opts.margin
            {
                continue;
            }
            let plus = loss_curvature(&perturbed_scalar(&inst.c, i, h), &inst.c_gt, eta, f)?.value;
            let minus = loss_curvature(&perturbed_scalar(&inst.c, i, -h), &inst.c_gt, eta, f)?.value;
            curvature.push(base_c.grad[i], (plus - minus) / (2.0 * h));
        }

        // Plane term, both inputs.
        let plane = |z: &FloatMap, n: &Vec3Map| loss_plane(z, n, &inst.z_gt, &inst.n_gt, &inst.c_gt, f);
        let base_p = plane(&inst.z, &inst.n)?;
        let residual = |i: usize| {
            let ray = inst.grid.ray_at(i);
            inst.z.values()[i] * inst.n.values()[i].normalize().dot(&ray)
                - inst.z_gt.values()[i] * inst.n_gt.values()[i].dot(&ray)
        };
        let r_max = valid.iter().fold(0.0f64, |m, &i| m.max(residual(i).abs()));
        for _ in 0..PIXELS_PER_INSTANCE {
            let i = pick(&mut rng);
            if !smooth_berhu_error(residual(i), base_p.threshold, r_max, opts.margin) {
                continue;
            }
            if plane_depth.samples < opts.samples {
                let plus = plane(&perturbed_scalar(&inst.z, i, h), &inst.n)?.value;
                let minus = plane(&perturbed_scalar(&inst.z, i, -h), &inst.n)?.value;
                plane_depth.push(base_p.grad_depth[i], (plus - minus) / (2.0 * h));
            }
            if plane_normal.samples < opts.samples {
                let axis = rng.random_range(0..3);
                let plus = plane(&inst.z, &perturbed_vector(&inst.n, i, axis, h))?.value;
                let minus = plane(&inst.z, &perturbed_vector(&inst.n, i, axis, -h))?.value;
                plane_normal.push(base_p.grad_normals[i][axis], (plus - minus) / (2.0 * h));
            }
        }

        // Baseline, full scale paired with a second random half-scale map.
        let half = inst.grid.halved()?;
        let z0 = Map::from_fn(half, |r, c| inst.z_gt.values()[inst.grid.index(2 * r, 2 * c)] + 0.3);
        let z0_gt = Map::from_fn(half, |r, c| inst.z_gt.values()[inst.grid.index(2 * r + 1, 2 * c)]);
        let alpha = [0.3, 0.6];
        let beta = [0.1, 0.4];
        let base_b = loss_baseline([&z0, &inst.z], [&z0_gt, &inst.z_gt], alpha, beta)?;
        for _ in 0..PIXELS_PER_INSTANCE {
            if baseline.samples >= opts.samples {
                break;
            }
            if rng.random_bool(0.5) {
                let i = rng.random_range(0..inst.grid.len());
                let plus = loss_baseline(
                    [&z0, &perturbed_scalar(&inst.z, i, h)],
                    [&z0_gt, &inst.z_gt],
                    alpha,
                    beta,
                )?
                .value;
                let minus = loss_baseline(
                    [&z0, &perturbed_scalar(&inst.z, i, -h)],
                    [&z0_gt, &inst.z_gt],
                    alpha,
                    beta,
                )?
                .value;
                baseline.push(base_b.gradients[1][i], (plus - minus) / (2.0 * h));
            } else {
                let i = rng.random_range(0..half.len());
                let plus = loss_baseline(
                    [&perturbed_scalar(&z0, i, h), &inst.z],
                    [&z0_gt, &inst.z_gt],
                    alpha,
                    beta,
                )?
                .value;
                let minus = loss_baseline(
                    [&perturbed_scalar(&z0, i, -h), &inst.z],
                    [&z0_gt, &inst.z_gt],
                    alpha,
                    beta,
                )?
                .value;
                baseline.push(base_b.gradients[0][i], (plus - minus) / (2.0 * h));
            }
        }
    }

    Ok([depth, normal, curvature, plane_depth, plane_normal, baseline]
        .into_iter()
        .map(Accumulator::report)
        .collect())
}
