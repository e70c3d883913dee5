//! Per-segment plane estimation and pixel → plane projection.
//!
//! For each segment the normal is the renormalised component-wise median of
//! the predicted normals. With the normal held fixed, the plane distance `d`
//! of `nᵀX + d = 0` is found by one-parameter RANSAC over the back-projected
//! points and refined by least squares over the inliers (the mean of
//! `−nᵀX`). Pixels are finally moved along their rays onto the plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{EquirectGrid, FloatMap, Vec3, Vec3Map};
use crate::metrics::lower_median;
use crate::segmentation::LabelMap;
use crate::{Error, Result};

/// Rays with `|nᵀb̂|` below this are grazing and keep their depth.
pub const GRAZING_COS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Point-to-plane distance (meters) below which a point is an inlier.
    pub inlier_tol: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_tol: 0.05,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "inlier tolerance {} must be positive",
                self.inlier_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub ransac: RansacConfig,
    /// Segments whose inlier fraction falls below this keep their raw depth.
    pub min_inlier_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            min_inlier_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum SegmentStatus {
    Projected,
    /// Inlier fraction below the gate.
    Rejected,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSegment {
    pub label: u32,
    pub pixels: Vec<usize>,
    pub normal: Vec3,
    pub distance: f64,
    pub inliers: Vec<usize>,
    pub status: SegmentStatus,
}

/// Serialisable summary of a fitted plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub label: u32,
    pub n: [f64; 3],
    pub d: f64,
    pub n_pixels: usize,
    pub n_inliers: usize,
}

impl From<&PlaneSegment> for PlaneRecord {
    fn from(s: &PlaneSegment) -> Self {
        Self {
            label: s.label,
            // `+ 0.0` turns −0 into 0 for tidier JSON.
            n: [s.normal.x + 0.0, s.normal.y + 0.0, s.normal.z + 0.0],
            d: s.distance,
            n_pixels: s.pixels.len(),
            n_inliers: s.inliers.len(),
        }
    }
}

/// Component-wise median of the valid normals of `pixels`, renormalised.
pub fn median_normal(pixels: &[usize], normals: &Vec3Map) -> Result<Vec3> {
    let valid: Vec<Vec3> = pixels.iter().filter_map(|&i| normals.at(i).copied()).collect();
    if valid.is_empty() {
        return Err(Error::EmptyMask("median normal"));
    }
    let axis = |k: usize| {
        let mut c: Vec<f64> = valid.iter().map(|n| n[k]).collect();
        lower_median(&mut c).expect("non-empty")
    };
    let m = Vec3::new(axis(0), axis(1), axis(2));
    m.try_normalize(1e-12)
        .ok_or_else(|| Error::Degenerate("median normal is the zero vector".into()))
}

/// Points `z b̂` of the valid depth pixels in `pixels`, sorted by pixel index.
fn segment_points(pixels: &[usize], depth: &FloatMap) -> Vec<(usize, Vec3)> {
    let grid = depth.grid();
    let mut idx: Vec<usize> = pixels.iter().copied().filter(|&i| depth.is_valid(i)).collect();
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter()
        .map(|i| (i, grid.ray_at(i) * depth.values()[i]))
        .collect()
}

/// One-parameter RANSAC on `d` with the normal fixed, then least-squares
/// refinement over the inliers. Returns `(d, inliers)`.
pub fn ransac_distance(
    pixels: &[usize],
    depth: &FloatMap,
    normal: &Vec3,
    cfg: &RansacConfig,
) -> Result<(f64, Vec<usize>)> {
    cfg.validate()?;
    let points = segment_points(pixels, depth);
    if points.is_empty() {
        return Err(Error::EmptyMask("RANSAC segment"));
    }
    let offsets: Vec<f64> = points.iter().map(|(_, x)| normal.dot(x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best_d = 0.0f64;
    let mut best_count = 0usize;
    for _ in 0..cfg.iterations {
        let k = rng.random_range(0..points.len());
        let d = -offsets[k];
        let count = offsets.iter().filter(|&&o| (o + d).abs() <= cfg.inlier_tol).count();
        if count > best_count || (count == best_count && d.abs() < best_d.abs()) {
            best_count = count;
            best_d = d;
        }
    }

    let inlier_offsets: Vec<f64> = offsets
        .iter()
        .copied()
        .filter(|&o| (o + best_d).abs() <= cfg.inlier_tol)
        .collect();
    let refined = -inlier_offsets.iter().sum::<f64>() / inlier_offsets.len() as f64;
    let inliers = points
        .iter()
        .zip(&offsets)
        .filter(|(_, &o)| (o + best_d).abs() <= cfg.inlier_tol)
        .map(|((i, _), _)| *i)
        .collect();
    Ok((refined, inliers))
}

/// Ray-plane intersection depths `−d / (nᵀb̂)` for `pixels`.
///
/// Returns, per pixel, the new depth or `None` when the ray grazes the plane
/// (`|nᵀb̂| < GRAZING_COS`) or meets it behind the camera.
pub fn project_to_plane(pixels: &[usize], normal: &Vec3, distance: f64, grid: &EquirectGrid) -> Vec<Option<f64>> {
    pixels
        .iter()
        .map(|&i| {
            let cos = normal.dot(&grid.ray_at(i));
            if cos.abs() < GRAZING_COS {
                return None;
            }
            let z = -distance / cos;
            (z > 0.0 && z.is_finite()).then_some(z)
        })
        .collect()
}

/// Per-segment fits plus the adjusted depth map.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub planes: Vec<PlaneSegment>,
    pub adjusted: FloatMap,
    /// Pixels of projected segments whose rays were grazing and kept their
    /// depth.
    pub grazing: Vec<bool>,
}

impl FitOutcome {
    pub fn records(&self) -> Vec<PlaneRecord> {
        self.planes
            .iter()
            .filter(|p| !matches!(p.status, SegmentStatus::Failed(_)))
            .map(PlaneRecord::from)
            .collect()
    }
}

fn segment_seed(seed: u64, label: u32) -> u64 {
    seed ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn fit_segment(label: u32, pixels: Vec<usize>, depth: &FloatMap, normals: &Vec3Map, cfg: &FitConfig) -> PlaneSegment {
    let grid = depth.grid();
    let failed = |pixels: Vec<usize>, e: Error| {
        log::warn!("segment {label}: keeping raw depth ({e})");
        PlaneSegment {
            label,
            pixels,
            normal: Vec3::zeros(),
            distance: 0.0,
            inliers: Vec::new(),
            status: SegmentStatus::Failed(e.to_string()),
        }
    };
    let mut normal = match median_normal(&pixels, normals) {
        Ok(n) => n,
        Err(e) => return failed(pixels, e),
    };
    // Orient towards the camera along the segment's median ray.
    let rays: Vec<Vec3> = pixels.iter().map(|&i| grid.ray_at(i)).collect();
    let axis = |k: usize| {
        let mut c: Vec<f64> = rays.iter().map(|r| r[k]).collect();
        lower_median(&mut c).unwrap_or(0.0)
    };
    let median_ray = Vec3::new(axis(0), axis(1), axis(2));
    if normal.dot(&median_ray) > 0.0 {
        normal = -normal;
    }
    let ransac = RansacConfig {
        seed: segment_seed(cfg.ransac.seed, label),
        ..cfg.ransac
    };
    let (distance, inliers) = match ransac_distance(&pixels, depth, &normal, &ransac) {
        Ok(r) => r,
        Err(e) => return failed(pixels, e),
    };
    let valid = pixels.iter().filter(|&&i| depth.is_valid(i)).count();
    let fraction = inliers.len() as f64 / valid.max(1) as f64;
    let status = if fraction >= cfg.min_inlier_fraction {
        SegmentStatus::Projected
    } else {
        log::info!("segment {label}: inlier fraction {fraction:.3} below gate, keeping raw depth");
        SegmentStatus::Rejected
    };
    PlaneSegment {
        label,
        pixels,
        normal,
        distance,
        inliers,
        status,
    }
}

/// Fits a plane to every segment and projects its pixels onto it.
///
/// Unlabelled pixels, failed segments and segments below the inlier gate keep
/// their input depth. Results depend only on the inputs and the seed.
pub fn fit_all(labels: &LabelMap, depth: &FloatMap, normals: &Vec3Map, cfg: &FitConfig) -> Result<FitOutcome> {
    if labels.grid() != depth.grid() {
        return Err(Error::ShapeMismatch("labels vs depth grid".into()));
    }
    depth.same_grid(normals, "depth vs normals")?;
    cfg.ransac.validate()?;
    let grid = *depth.grid();

    let planes: Vec<PlaneSegment> = labels
        .segments()
        .into_par_iter()
        .enumerate()
        .map(|(k, pixels)| fit_segment(k as u32 + 1, pixels, depth, normals, cfg))
        .collect();

    let mut adjusted = depth.clone();
    let mut grazing = vec![false; grid.len()];
    for plane in planes.iter().filter(|p| p.status == SegmentStatus::Projected) {
        let targets: Vec<usize> = plane.pixels.iter().copied().filter(|&i| depth.is_valid(i)).collect();
        for (i, z) in targets
            .iter()
            .zip(project_to_plane(&targets, &plane.normal, plane.distance, &grid))
        {
            match z {
                Some(z) => adjusted.values_mut()[*i] = z,
                None => grazing[*i] = true,
            }
        }
    }
    Ok(FitOutcome {
        planes,
        adjusted,
        grazing,
    })
}
