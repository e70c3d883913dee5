//! Principal curvature of a normal map and the plane boundary map.
//!
//! At each pixel the normal `n` is completed to an orthonormal basis
//! `(u, v, n)`. With `∂n/∂x` along increasing column (east) and `∂n/∂y` along
//! increasing row (south), the second fundamental form is
//!
//! ```text
//! A = −∂n/∂x · u,   B = −∂n/∂y · u,   C = −∂n/∂y · v
//! ```
//!
//! and the principal curvatures are the eigenvalues of `[[A, B], [B, C]]`.
//! Derivatives are central differences; with [`Differencing::ArcLength`] the
//! steps are the unit-sphere arc lengths `cos φ · 2π/width` and `π/height`.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{FloatMap, Map, Vec3, Vec3Map};
use crate::{Error, Result};

/// Denominator below which the longitude step is treated as singular.
const MIN_COS_LAT: f64 = 1e-9;

/// How finite differences are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Differencing {
    /// Unit-sphere arc length (curvature in 1/m on the unit sphere).
    #[default]
    ArcLength,
    /// Plain pixel steps.
    RawPixel,
}

/// Second fundamental form coefficients at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondForm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Per-pixel `(κ1, κ2)` with `κ1 ≥ κ2`.
pub type CurvatureMap = Map<Vector2<f64>>;

/// Tangent vectors `(u, v)` completing `n` to a right-handed orthonormal
/// basis `(u, v, n)`.
pub fn local_basis(n: &Vec3) -> Result<(Vec3, Vec3)> {
    let len = n.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::InvalidInput("cannot build a basis around a zero normal".into()));
    }
    let n = n / len;
    let axis = if n.y.abs() > 0.99 { Vec3::x() } else { Vec3::y() };
    let u = axis.cross(&n).normalize();
    let v = n.cross(&u);
    Ok((u, v))
}

/// Eigenvalues of the symmetric form, largest first.
pub fn principal_curvatures(f: &SecondForm) -> (f64, f64) {
    let m = 0.5 * (f.a + f.c);
    let half = 0.5 * (f.a - f.c);
    let r = half.hypot(f.b);
    (m + r, m - r)
}

/// Second fundamental form at `(row, col)`; `None` if the pixel or a required
/// neighbour is invalid.
pub fn second_form(normals: &Vec3Map, row: usize, col: usize, mode: Differencing) -> Option<SecondForm> {
    let grid = normals.grid();
    let (w, h) = (grid.width(), grid.height());
    let n = normals.get(row, col)?.try_normalize(0.0)?;
    let (u, v) = local_basis(&n).ok()?;

    let east = normals.get(row, (col + 1) % w)?;
    let west = normals.get(row, (col + w - 1) % w)?;
    let below = (row + 1).min(h - 1);
    let above = row.saturating_sub(1);
    let south = normals.get(below, col)?;
    let north = normals.get(above, col)?;

    let (dlon, dlat) = grid.angular_steps();
    let (dx, dy) = match mode {
        Differencing::ArcLength => {
            let cos_lat = grid.latitude(row).cos().max(MIN_COS_LAT);
            (2.0 * dlon * cos_lat, (below - above) as f64 * dlat)
        }
        Differencing::RawPixel => (2.0, (below - above) as f64),
    };
    if dy == 0.0 {
        return None;
    }
    let dn_dx = (east - west) / dx;
    let dn_dy = (south - north) / dy;
    Some(SecondForm {
        a: -dn_dx.dot(&u),
        b: -dn_dy.dot(&u),
        c: -dn_dy.dot(&v),
    })
}

/// Principal curvatures of every pixel of a normal map.
pub fn curvature_map(normals: &Vec3Map, mode: Differencing) -> CurvatureMap {
    let grid = *normals.grid();
    let samples: Vec<Option<Vector2<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (row, col) = grid.row_col(i);
            second_form(normals, row, col, mode).map(|f| {
                let (k1, k2) = principal_curvatures(&f);
                Vector2::new(k1, k2)
            })
        })
        .collect();
    let mask = samples.iter().map(Option::is_some).collect();
    let values = samples.into_iter().map(|s| s.unwrap_or_else(Vector2::zeros)).collect();
    Map::new(grid, values, mask).expect("sizes follow the grid")
}

/// Plane boundary map `‖(κ1, κ2)‖₂`.
pub fn boundary_map(curv: &CurvatureMap) -> FloatMap {
    curv.map(|k| k.x.hypot(k.y))
}
