//! L2 + gradient smoothness baseline.
//!
//! `(1/|M|) Σ_s Σ_{i∈M_s} α_s (z_i − z*_i)² + β_s ‖∇z_i‖²` where `|M|` counts the
//! valid full-resolution pixels and `∇z` is the forward difference to the east (wrapping in longitude) and to the south
//! (zero on the last row). A difference only contributes when both of its
//! pixels are valid.

use crate::geom::{joint_mask, FloatMap};
use crate::reduce::pairwise_sum;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub value: f64,
    /// Per-scale value before summation.
    pub scale_values: [f64; 2],
    pub gradients: [Vec<f64>; 2],
}

/// Unnormalised sum and gradient of one scale, with its valid pixel count.
fn scale_term(z: &FloatMap, z_gt: &FloatMap, alpha: f64, beta: f64) -> Result<(f64, Vec<f64>, usize)> {
    z.same_grid(z_gt, "baseline prediction vs target")?;
    let grid = *z.grid();
    let mask = joint_mask(&[z.mask(), z_gt.mask()]);
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask("baseline loss"));
    }
    let zv = z.values();
    let gv = z_gt.values();
    let (w, h) = (grid.width(), grid.height());

    let mut parts = Vec::with_capacity(grid.len());
    let mut grad = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        if !mask[i] {
            continue;
        }
        let (row, col) = grid.row_col(i);
        let e = zv[i] - gv[i];
        let mut v = alpha * e * e;
        grad[i] += 2.0 * alpha * e;

        let east = row * w + (col + 1) % w;
        let south = (row + 1 < h).then(|| i + w);
        for j in std::iter::once(east).chain(south) {
            if j == i || !mask[j] {
                continue;
            }
            let d = zv[j] - zv[i];
            v += beta * d * d;
            grad[j] += 2.0 * beta * d;
            grad[i] -= 2.0 * beta * d;
        }
        parts.push(v);
    }
    Ok((pairwise_sum(&parts), grad, count))
}

/// Baseline loss at both scales (index 0 is the half-resolution one).
pub fn loss_baseline(
    z: [&FloatMap; 2],
    z_gt: [&FloatMap; 2],
    alpha: [f64; 2],
    beta: [f64; 2],
) -> Result<BaselineResult> {
    let (v0, mut g0, _) = scale_term(z[0], z_gt[0], alpha[0], beta[0])?;
    let (v1, mut g1, count) = scale_term(z[1], z_gt[1], alpha[1], beta[1])?;
    let norm = 1.0 / count as f64;
    g0.iter_mut().chain(g1.iter_mut()).for_each(|g| *g *= norm);
    let (v0, v1) = (v0 * norm, v1 * norm);
    Ok(BaselineResult {
        value: v0 + v1,
        scale_values: [v0, v1],
        gradients: [g0, g1],
    })
}
