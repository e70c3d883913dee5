//! Plane-aware multi-task loss with analytic gradients.
//!
//! Every term is a mean over the valid pixels `M` of a per-pixel value
//! weighted by `P(x) = x · exp(−‖c*‖)`, where `‖c*‖` is the ground-truth
//! plane boundary (principal curvature norm) at that pixel:
//!
//! * depth: `P(B(z − z*))`
//! * normal: `P(−n̂ᵀ n*)` with `n̂ = n / ‖n‖`
//! * boundary: `P(B(c − c*) + η |c|)`
//! * plane distance: `P(B(z n̂ᵀb̂ − z* n*ᵀb̂))`
//!
//! `B` is the reverse Huber (BerHu) penalty whose knee `T` is a fixed fraction
//! of the largest absolute error of the term. `T` is held constant when
//! differentiating. Gradients are returned per pixel; masked pixels get zero.

mod baseline;
pub mod gradcheck;

pub use baseline::{loss_baseline, BaselineResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{joint_mask, FloatMap, Map, Vec3, Vec3Map};
use crate::reduce::pairwise_sum;
use crate::{Error, Result};

/// Knee used when every error of a term is zero.
pub const THRESHOLD_FLOOR: f64 = f64::EPSILON;

/// Loss hyper-parameters. Index 0 is the half-resolution scale, index 1 the
/// full resolution one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub zeta: [f64; 2],
    pub eta: f64,
    pub berhu_fraction: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: [0.3, 0.6],
            beta: [0.1, 0.4],
            gamma: [0.0, 0.3],
            zeta: [0.3, 0.6],
            eta: 0.1,
            berhu_fraction: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.gamma)
            .chain(&self.zeta)
            .chain(std::iter::once(&self.eta));
        for &w in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidConfig(format!("loss weight {w} must be finite and >= 0")));
            }
        }
        if !(self.berhu_fraction > 0.0 && self.berhu_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "berhu_fraction {} must lie in (0, 1]",
                self.berhu_fraction
            )));
        }
        Ok(())
    }
}

/// Reverse Huber penalty and its derivative.
pub fn berhu(x: f64, threshold: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput(format!(
            "BerHu threshold {threshold} must be positive"
        )));
    }
    Ok(berhu_unchecked(x, threshold))
}

#[inline]
fn berhu_unchecked(x: f64, t: f64) -> (f64, f64) {
    let ax = x.abs();
    if ax <= t {
        (ax, sign(x))
    } else {
        ((x * x + t * t) / (2.0 * t), x / t)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// BerHu knee: `fraction · max |error|`, floored at [`THRESHOLD_FLOOR`].
pub fn berhu_threshold(errors: &[f64], fraction: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyMask("BerHu threshold"));
    }
    let max = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let t = fraction * max;
    Ok(if t > 0.0 { t } else { THRESHOLD_FLOOR })
}

/// Plane-aware weighting `x · exp(−‖c*‖)`.
#[inline]
pub fn plane_weight(x: f64, c_star_norm: f64) -> f64 {
    x * (-c_star_norm).exp()
}

/// Value and per-pixel gradient of a term with one scalar input map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTerm {
    pub value: f64,
    pub threshold: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalTerm {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneTerm {
    pub value: f64,
    pub threshold: f64,
    pub grad_depth: Vec<f64>,
    pub grad_normals: Vec<Vec3>,
}

fn check_boundary(c_star: &FloatMap, valid: &[usize]) -> Result<()> {
    for &i in valid {
        let c = c_star.values()[i];
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ground-truth boundary {c} at pixel {i} must be finite and >= 0"
            )));
        }
    }
    Ok(())
}

fn valid_pixels(masks: &[&[bool]], what: &'static str) -> Result<Vec<usize>> {
    let m = joint_mask(masks);
    let valid: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
    if valid.is_empty() {
        Err(Error::EmptyMask(what))
    } else {
        Ok(valid)
    }
}

/// Mean of plane-weighted BerHu of `errors`, an error per valid pixel.
/// Returns `(value, T, dvalue/derror per valid pixel)`.
fn weighted_berhu(errors: &[f64], weights: &[f64], fraction: f64) -> Result<(f64, f64, Vec<f64>)> {
    let t = berhu_threshold(errors, fraction)?;
    let count = errors.len() as f64;
    let (vals, grads): (Vec<f64>, Vec<f64>) = errors
        .par_iter()
        .zip(weights)
        .map(|(&e, &w)| {
            let (b, db) = berhu_unchecked(e, t);
            (w * b, w * db / count)
        })
        .unzip();
    Ok((pairwise_sum(&vals) / count, t, grads))
}

/// Depth term `(1/|M|) Σ P(B(z − z*))`.
pub fn loss_depth(z: &FloatMap, z_gt: &FloatMap, c_gt: &FloatMap, fraction: f64) -> Result<ScalarTerm> {
    z.same_grid(z_gt, "depth prediction vs target")?;
    z.same_grid(c_gt, "depth prediction vs boundary target")?;
    let valid = valid_pixels(&[z.mask(), z_gt.mask(), c_gt.mask()], "depth loss")?;
    check_boundary(c_gt, &valid)?;
    let errors: Vec<f64> = valid.iter().map(|&i| z.values()[i] - z_gt.values()[i]).collect();
    let weights: Vec<f64> = valid.iter().map(|&i| (-c_gt.values()[i]).exp()).collect();
    let (value, threshold, g) = weighted_berhu(&errors, &weights, fraction)?;
    let mut grad = vec![0.0; z.grid().len()];
    for (&i, gi) in valid.iter().zip(g) {
        grad[i] = gi;
    }
    Ok(ScalarTerm { value, threshold, grad })
}

/// Normal term `(1/|M|) Σ P(−n̂ᵀ n*)`, differentiated through the
/// normalisation `n̂ = n/‖n‖`.
pub fn loss_normal(n_raw: &Vec3Map, n_gt: &Vec3Map, c_gt: &FloatMap) -> Result<NormalTerm> {
    n_raw.same_grid(n_gt, "normal prediction vs target")?;
    n_raw.same_grid(c_gt, "normal prediction vs boundary target")?;
    let valid = valid_pixels(&[n_raw.mask(), n_gt.mask(), c_gt.mask()], "normal loss")?;
    check_boundary(c_gt, &valid)?;
    let count = valid.len() as f64;
    let per_pixel: Result<Vec<(f64, Vec3)>> = valid
        .par_iter()
        .map(|&i| {
            let raw = n_raw.values()[i];
            let len = raw.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "zero-length predicted normal at pixel {i}"
                )));
            }
            let n = raw / len;
            let target = n_gt.values()[i];
            let w = (-c_gt.values()[i]).exp();
            // d(−n̂ᵀt)/d raw = −(I − n̂n̂ᵀ) t / ‖raw‖
            let g = -(target - n * n.dot(&target)) / len;
            Ok((-w * n.dot(&target), g * (w / count)))
        })
        .collect();
    let (vals, grads): (Vec<f64>, Vec<Vec3>) = per_pixel?.into_iter().unzip();
    let mut grad = vec![Vec3::zeros(); n_raw.grid().len()];
    for (&i, g) in valid.iter().zip(grads) {
        grad[i] = g;
    }
    Ok(NormalTerm {
        value: pairwise_sum(&vals) / count,
        grad,
    })
}

/// Boundary term `(1/|M|) Σ P(B(c − c*) + η |c|)`.
pub fn loss_curvature(c: &FloatMap, c_gt: &FloatMap, eta: f64, fraction: f64) -> Result<ScalarTerm> {
    c.same_grid(c_gt, "boundary prediction vs target")?;
    let valid = valid_pixels(&[c.mask(), c_gt.mask()], "boundary loss")?;
    check_boundary(c_gt, &valid)?;
    let errors: Vec<f64> = valid.iter().map(|&i| c.values()[i] - c_gt.values()[i]).collect();
    let t = berhu_threshold(&errors, fraction)?;
    let count = valid.len() as f64;
    let (vals, grads): (Vec<f64>, Vec<f64>) = valid
        .par_iter()
        .zip(&errors)
        .map(|(&i, &e)| {
            let ci = c.values()[i];
            let w = (-c_gt.values()[i]).exp();
            let (b, db) = berhu_unchecked(e, t);
            (w * (b + eta * ci.abs()), w * (db + eta * sign(ci)) / count)
        })
        .unzip();
    let mut grad = vec![0.0; c.grid().len()];
    for (&i, g) in valid.iter().zip(grads) {
        grad[i] = g;
    }
    Ok(ScalarTerm {
        value: pairwise_sum(&vals) / count,
        threshold: t,
        grad,
    })
}

/// Plane-distance term on `r = z n̂ᵀb̂ − z* n*ᵀb̂`.
pub fn loss_plane(
    z: &FloatMap,
    n_raw: &Vec3Map,
    z_gt: &FloatMap,
    n_gt: &Vec3Map,
    c_gt: &FloatMap,
    fraction: f64,
) -> Result<PlaneTerm> {
    z.same_grid(n_raw, "plane loss depth vs normals")?;
    z.same_grid(z_gt, "plane loss depth vs target")?;
    z.same_grid(n_gt, "plane loss depth vs target normals")?;
    z.same_grid(c_gt, "plane loss depth vs boundary target")?;
    let grid = *z.grid();
    let valid = valid_pixels(
        &[z.mask(), n_raw.mask(), z_gt.mask(), n_gt.mask(), c_gt.mask()],
        "plane loss",
    )?;
    check_boundary(c_gt, &valid)?;

    struct Pixel {
        residual: f64,
        n: Vec3,
        len: f64,
        ray: Vec3,
        z: f64,
    }
    let pixels: Result<Vec<Pixel>> = valid
        .par_iter()
        .map(|&i| {
            let raw = n_raw.values()[i];
            let len = raw.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "zero-length predicted normal at pixel {i}"
                )));
            }
            let n = raw / len;
            let ray = grid.ray_at(i);
            let zi = z.values()[i];
            let residual = zi * n.dot(&ray) - z_gt.values()[i] * n_gt.values()[i].dot(&ray);
            Ok(Pixel {
                residual,
                n,
                len,
                ray,
                z: zi,
            })
        })
        .collect();
    let pixels = pixels?;
    let residuals: Vec<f64> = pixels.iter().map(|p| p.residual).collect();
    let weights: Vec<f64> = valid.iter().map(|&i| (-c_gt.values()[i]).exp()).collect();
    let (value, threshold, dres) = weighted_berhu(&residuals, &weights, fraction)?;

    let mut grad_depth = vec![0.0; grid.len()];
    let mut grad_normals = vec![Vec3::zeros(); grid.len()];
    for ((&i, p), g) in valid.iter().zip(&pixels).zip(dres) {
        grad_depth[i] = g * p.n.dot(&p.ray);
        // ∂r/∂raw = z (I − n̂n̂ᵀ) b̂ / ‖raw‖
        grad_normals[i] = (p.ray - p.n * p.n.dot(&p.ray)) * (g * p.z / p.len);
    }
    Ok(PlaneTerm {
        value,
        threshold,
        grad_depth,
        grad_normals,
    })
}

/// Network outputs at one scale.
#[derive(Debug, Clone)]
pub struct ScalePrediction {
    pub depth: FloatMap,
    pub normals: Vec3Map,
    /// Boundary magnitude `‖c‖`; only required where `gamma` is non-zero.
    pub boundary: Option<FloatMap>,
}

/// Predictions at both scales; `scales[0]` is the 2× downsampled one.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub scales: [ScalePrediction; 2],
}

/// Ground truth at one scale.
#[derive(Debug, Clone)]
pub struct TargetMaps {
    pub depth: FloatMap,
    pub normals: Vec3Map,
    pub boundary: FloatMap,
}

#[derive(Debug, Clone)]
pub struct TargetSet {
    pub scales: [TargetMaps; 2],
}

impl TargetSet {
    /// Builds both scales from full resolution ground truth by 2×2 area
    /// averaging.
    pub fn from_full_resolution(full: TargetMaps) -> Result<Self> {
        let half = TargetMaps {
            depth: downsample_scalar(&full.depth)?,
            normals: downsample_normals(&full.normals)?,
            boundary: downsample_scalar(&full.boundary)?,
        };
        Ok(Self { scales: [half, full] })
    }
}

fn block(grid: &crate::EquirectGrid, row: usize, col: usize) -> [usize; 4] {
    let (r, c) = (2 * row, 2 * col);
    [
        grid.index(r, c),
        grid.index(r, c + 1),
        grid.index(r + 1, c),
        grid.index(r + 1, c + 1),
    ]
}

/// 2×2 area average over valid pixels; a coarse pixel is valid if any of its
/// four children is.
pub fn downsample_scalar(map: &FloatMap) -> Result<FloatMap> {
    let fine = *map.grid();
    let coarse = fine.halved()?;
    let mut values = Vec::with_capacity(coarse.len());
    let mut mask = Vec::with_capacity(coarse.len());
    for row in 0..coarse.height() {
        for col in 0..coarse.width() {
            let taps: Vec<f64> = block(&fine, row, col)
                .into_iter()
                .filter_map(|i| map.at(i).copied())
                .collect();
            mask.push(!taps.is_empty());
            values.push(if taps.is_empty() {
                0.0
            } else {
                taps.iter().sum::<f64>() / taps.len() as f64
            });
        }
    }
    Map::new(coarse, values, mask)
}

/// 2×2 average of valid normals followed by renormalisation.
pub fn downsample_normals(map: &Vec3Map) -> Result<Vec3Map> {
    let fine = *map.grid();
    let coarse = fine.halved()?;
    let mut values = Vec::with_capacity(coarse.len());
    let mut mask = Vec::with_capacity(coarse.len());
    for row in 0..coarse.height() {
        for col in 0..coarse.width() {
            let sum: Vec3 = block(&fine, row, col)
                .into_iter()
                .filter_map(|i| map.at(i).copied())
                .sum();
            match sum.try_normalize(1e-12) {
                Some(n) => {
                    values.push(n);
                    mask.push(true);
                }
                None => {
                    values.push(Vec3::zeros());
                    mask.push(false);
                }
            }
        }
    }
    Map::new(coarse, values, mask)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TermValues {
    pub depth: f64,
    pub normal: f64,
    pub curvature: f64,
    pub plane: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGradients {
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub boundary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub total: f64,
    /// Unweighted term values per scale.
    pub terms: [TermValues; 2],
    /// Gradients of `total` per scale.
    pub gradients: [ScaleGradients; 2],
}

/// Weighted two-scale sum of all four terms, with gradients of the total.
pub fn loss_total(preds: &PredictionSet, targets: &TargetSet, config: &LossConfig) -> Result<LossResult> {
    config.validate()?;
    let mut terms = [TermValues::default(); 2];
    let mut grads: Vec<ScaleGradients> = Vec::with_capacity(2);
    let mut total_parts = [0.0; 8];

    for s in 0..2 {
        let p = &preds.scales[s];
        let t = &targets.scales[s];
        p.depth.same_grid(&t.depth, "prediction vs target scale")?;
        let n = p.depth.grid().len();
        let (alpha, beta, gamma, zeta) = (config.alpha[s], config.beta[s], config.gamma[s], config.zeta[s]);
        let f = config.berhu_fraction;

        let depth = loss_depth(&p.depth, &t.depth, &t.boundary, f)?;
        let normal = loss_normal(&p.normals, &t.normals, &t.boundary)?;
        let plane = loss_plane(&p.depth, &p.normals, &t.depth, &t.normals, &t.boundary, f)?;
        let curvature = match &p.boundary {
            Some(c) => Some(loss_curvature(c, &t.boundary, config.eta, f)?),
            None if gamma == 0.0 => None,
            None => {
                return Err(Error::InvalidInput(format!(
                    "scale {s} has gamma = {gamma} but no boundary prediction"
                )))
            }
        };

        terms[s] = TermValues {
            depth: depth.value,
            normal: normal.value,
            curvature: curvature.as_ref().map_or(0.0, |c| c.value),
            plane: plane.value,
        };
        total_parts[4 * s] = alpha * depth.value;
        total_parts[4 * s + 1] = beta * normal.value;
        total_parts[4 * s + 2] = gamma * terms[s].curvature;
        total_parts[4 * s + 3] = zeta * plane.value;

        let grad_depth = (0..n)
            .map(|i| alpha * depth.grad[i] + zeta * plane.grad_depth[i])
            .collect();
        let grad_normals = (0..n)
            .map(|i| normal.grad[i] * beta + plane.grad_normals[i] * zeta)
            .collect();
        let grad_boundary = match curvature {
            Some(c) => c.grad.iter().map(|g| gamma * g).collect(),
            None => vec![0.0; n],
        };
        grads.push(ScaleGradients {
            depth: grad_depth,
            normals: grad_normals,
            boundary: grad_boundary,
        });
    }

    let mut it = grads.into_iter();
    let g0 = it.next().expect("two scales");
    let g1 = it.next().expect("two scales");
    Ok(LossResult {
        total: total_parts.iter().sum(),
        terms,
        gradients: [g0, g1],
    })
}
