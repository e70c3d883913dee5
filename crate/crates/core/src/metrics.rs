//! Depth and surface normal evaluation.
//!
//! Depth predictions are median-scaled against the ground truth and then
//! scored with the usual AbsRel / SqRel / RMS / δ set, over pixels whose
//! ground truth lies in `(0, T_depth]`. Normals are scored by angular error.

use serde::{Deserialize, Serialize};

use crate::geom::{joint_mask, FloatMap, Vec3Map};
use crate::reduce::pairwise_mean;
use crate::{Error, Result};

/// Number of standard deviations above the mean used for `T_depth`.
pub const T_DEPTH_SIGMAS: f64 = 4.375;

/// Angular thresholds (degrees) reported by [`normal_metrics`].
pub const ANGLE_THRESHOLDS_DEG: [f64; 4] = [7.5, 15.0, 30.0, 45.0];

/// Base of the δ accuracy thresholds.
pub const DELTA_BASE: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms_lin: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    /// Mean angular error in degrees.
    pub mean_angle: f64,
    /// Fraction of pixels under each of [`ANGLE_THRESHOLDS_DEG`].
    pub frac_under: [f64; 4],
}

/// Lower median (element `(n − 1)/2` of the sorted values).
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Some(*m)
}

fn masked_values(map: &FloatMap, mask: &[bool]) -> Vec<f64> {
    map.values()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect()
}

/// Scales `pred` by `median(gt) / median(pred)` over `mask` (intersected with
/// both maps' validity).
pub fn median_scale(pred: &FloatMap, gt: &FloatMap, mask: &[bool]) -> Result<FloatMap> {
    pred.same_grid(gt, "median scaling")?;
    let m = joint_mask(&[pred.mask(), gt.mask(), mask]);
    let mut p = masked_values(pred, &m);
    let mut g = masked_values(gt, &m);
    let mp = lower_median(&mut p).ok_or(Error::EmptyMask("median scaling"))?;
    let mg = lower_median(&mut g).ok_or(Error::EmptyMask("median scaling"))?;
    if !(mp > 0.0 && mg > 0.0) {
        return Err(Error::Degenerate(format!(
            "medians must be positive (prediction {mp}, ground truth {mg})"
        )));
    }
    let k = mg / mp;
    Ok(pred.map(|v| v * k))
}

/// `T_depth = mean + 4.375 σ` over every valid depth of a set of maps
/// (population standard deviation).
pub fn depth_threshold(maps: &[&FloatMap]) -> Result<f64> {
    let values: Vec<f64> = maps
        .iter()
        .flat_map(|m| m.values().iter().zip(m.mask()).filter(|(_, &k)| k).map(|(&v, _)| v))
        .filter(|v| v.is_finite())
        .collect();
    let mean = pairwise_mean(&values).ok_or(Error::EmptyMask("depth threshold"))?;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_mean(&sq).unwrap_or(0.0);
    Ok(mean + T_DEPTH_SIGMAS * var.sqrt())
}

/// Pixels with `0 < gt ≤ t_depth`, intersected with the ground truth's mask.
pub fn valid_mask(gt: &FloatMap, t_depth: f64) -> Result<Vec<bool>> {
    if !(t_depth > 0.0) {
        return Err(Error::InvalidInput(format!("T_depth {t_depth} must be positive")));
    }
    Ok(gt
        .values()
        .iter()
        .zip(gt.mask())
        .map(|(&g, &m)| m && g > 0.0 && g <= t_depth)
        .collect())
}

/// Depth metrics of an (already median-scaled) prediction.
pub fn depth_metrics(pred: &FloatMap, gt: &FloatMap, mask: &[bool]) -> Result<DepthMetrics> {
    pred.same_grid(gt, "depth metrics")?;
    let m = joint_mask(&[pred.mask(), gt.mask(), mask]);
    let mut abs_rel = Vec::new();
    let mut sq_rel = Vec::new();
    let mut sq = Vec::new();
    let mut sq_log = Vec::new();
    let mut hits = [0usize; 3];
    let thresholds = [DELTA_BASE, DELTA_BASE.powi(2), DELTA_BASE.powi(3)];
    for i in (0..m.len()).filter(|&i| m[i]) {
        let p = pred.values()[i];
        let g = gt.values()[i];
        if !(p > 0.0) {
            return Err(Error::InvalidInput(format!(
                "non-positive predicted depth {p} at pixel {i}"
            )));
        }
        if !(g > 0.0) {
            return Err(Error::InvalidInput(format!(
                "non-positive ground-truth depth {g} at pixel {i}"
            )));
        }
        let d = p - g;
        abs_rel.push(d.abs() / g);
        sq_rel.push(d * d / g);
        sq.push(d * d);
        let l = p.ln() - g.ln();
        sq_log.push(l * l);
        let ratio = (p / g).max(g / p);
        for (h, t) in hits.iter_mut().zip(thresholds) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    let n = abs_rel.len();
    if n == 0 {
        return Err(Error::EmptyMask("depth metrics"));
    }
    let mean = |v: &[f64]| pairwise_mean(v).expect("non-empty");
    Ok(DepthMetrics {
        abs_rel: mean(&abs_rel),
        sq_rel: mean(&sq_rel),
        rms_lin: mean(&sq).sqrt(),
        rms_log: mean(&sq_log).sqrt(),
        delta1: hits[0] as f64 / n as f64,
        delta2: hits[1] as f64 / n as f64,
        delta3: hits[2] as f64 / n as f64,
    })
}

/// Angular error statistics between two normal maps.
pub fn normal_metrics(pred: &Vec3Map, gt: &Vec3Map, mask: &[bool]) -> Result<NormalMetrics> {
    pred.same_grid(gt, "normal metrics")?;
    let m = joint_mask(&[pred.mask(), gt.mask(), mask]);
    let mut angles = Vec::new();
    for i in (0..m.len()).filter(|&i| m[i]) {
        let p = pred.values()[i]
            .try_normalize(0.0)
            .ok_or_else(|| Error::InvalidInput(format!("zero predicted normal at pixel {i}")))?;
        let g = gt.values()[i]
            .try_normalize(0.0)
            .ok_or_else(|| Error::InvalidInput(format!("zero ground-truth normal at pixel {i}")))?;
        angles.push(p.dot(&g).clamp(-1.0, 1.0).acos().to_degrees());
    }
    let mean_angle = pairwise_mean(&angles).ok_or(Error::EmptyMask("normal metrics"))?;
    let n = angles.len() as f64;
    let frac_under = ANGLE_THRESHOLDS_DEG.map(|t| angles.iter().filter(|&&a| a < t).count() as f64 / n);
    Ok(NormalMetrics { mean_angle, frac_under })
}
