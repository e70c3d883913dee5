//! Spherical image geometry.
//!
//! Conventions used everywhere in the crate:
//!
//! * An equirectangular grid is `width × height` with `width == 2 * height`.
//! * Pixel `(row, col)` is sampled at its centre: latitude
//!   `φ = π/2 − (row + 0.5)·π/height` and longitude
//!   `λ = (col + 0.5)·2π/width − π`.
//! * The camera frame is y-up. The ray through `(φ, λ)` is
//!   `(cos φ · sin λ, sin φ, cos φ · cos λ)`, so `λ = 0` looks down `+z` and
//!   `λ = π/2` looks down `+x`.
//! * Depth is the Euclidean distance along the ray, not planar Z.
//! * Every map carries a validity mask. Reductions only visit valid pixels.

mod cubemap;

pub use cubemap::{equirect_from_cubemap, CubeFace, CubeMap};

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// A pixel grid over the full sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridDims")]
pub struct EquirectGrid {
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct GridDims {
    width: usize,
    height: usize,
}

impl TryFrom<GridDims> for EquirectGrid {
    type Error = Error;

    fn try_from(d: GridDims) -> Result<Self> {
        EquirectGrid::from_dims(d.width, d.height)
    }
}

impl EquirectGrid {
    /// Grid of `2·height × height` pixels.
    pub fn new(height: usize) -> Result<Self> {
        Self::from_dims(2 * height, height)
    }

    pub fn from_dims(width: usize, height: usize) -> Result<Self> {
        if height == 0 {
            return Err(Error::InvalidGrid {
                width,
                height,
                reason: "height must be positive",
            });
        }
        if width != 2 * height {
            return Err(Error::InvalidGrid {
                width,
                height,
                reason: "width must equal 2 * height",
            });
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    #[inline]
    pub fn latitude(&self, row: usize) -> f64 {
        FRAC_PI_2 - (row as f64 + 0.5) * PI / self.height as f64
    }

    #[inline]
    pub fn longitude(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * 2.0 * PI / self.width as f64 - PI
    }

    /// Unit ray through the centre of pixel `(row, col)`.
    #[inline]
    pub fn ray(&self, row: usize, col: usize) -> Vec3 {
        lat_lon_to_direction(self.latitude(row), self.longitude(col))
    }

    #[inline]
    pub fn ray_at(&self, index: usize) -> Vec3 {
        let (row, col) = self.row_col(index);
        self.ray(row, col)
    }

    /// Angular pixel steps `(Δλ, Δφ)` in radians.
    pub fn angular_steps(&self) -> (f64, f64) {
        (2.0 * PI / self.width as f64, PI / self.height as f64)
    }

    /// Continuous pixel coordinates `(row, col)` of a latitude/longitude pair,
    /// in units where pixel centres sit on integers.
    pub fn lat_lon_to_pixel(&self, lat: f64, lon: f64) -> (f64, f64) {
        let row = (FRAC_PI_2 - lat) / PI * self.height as f64 - 0.5;
        let col = (lon + PI) / (2.0 * PI) * self.width as f64 - 0.5;
        (row, col)
    }

    /// Grid with half the resolution in both directions.
    pub fn halved(&self) -> Result<Self> {
        if !self.height.is_multiple_of(2) {
            return Err(Error::InvalidGrid {
                width: self.width,
                height: self.height,
                reason: "cannot halve a grid with odd height",
            });
        }
        Self::new(self.height / 2)
    }

    #[inline]
    pub(crate) fn wrap_col(&self, col: isize) -> usize {
        col.rem_euclid(self.width as isize) as usize
    }

    #[inline]
    pub(crate) fn clamp_row(&self, row: isize) -> usize {
        row.clamp(0, self.height as isize - 1) as usize
    }

    /// 4-neighbours of a pixel: longitude wraps, rows stop at the poles.
    pub fn neighbors4(&self, index: usize, wrap: bool) -> impl Iterator<Item = usize> {
        let (row, col) = self.row_col(index);
        let (w, h) = (self.width, self.height);
        let left = if col > 0 {
            Some(index - 1)
        } else if wrap && w > 1 {
            Some(index + w - 1)
        } else {
            None
        };
        let right = if col + 1 < w {
            Some(index + 1)
        } else if wrap && w > 1 {
            Some(index + 1 - w)
        } else {
            None
        };
        let up = (row > 0).then(|| index - w);
        let down = (row + 1 < h).then(|| index + w);
        [up, left, right, down].into_iter().flatten()
    }
}

/// `(φ, λ)` of a direction; the direction need not be normalised.
pub fn direction_to_lat_lon(dir: &Vec3) -> (f64, f64) {
    let n = dir.norm();
    let lat = (dir.y / n).clamp(-1.0, 1.0).asin();
    let lon = dir.x.atan2(dir.z);
    (lat, lon)
}

#[inline]
pub fn lat_lon_to_direction(lat: f64, lon: f64) -> Vec3 {
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    Vec3::new(cl * so, sl, cl * co)
}

/// Unit ray through pixel `(row, col)`.
pub fn ray_direction(grid: &EquirectGrid, row: usize, col: usize) -> Vec3 {
    grid.ray(row, col)
}

/// A dense raster over an [`EquirectGrid`] with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Map<T> {
    grid: EquirectGrid,
    values: Vec<T>,
    mask: Vec<bool>,
}

pub type FloatMap = Map<f64>;
pub type Vec3Map = Map<Vec3>;
/// Two-channel `(φ, λ)` map.
pub type LatLonMap = Map<Vector2<f64>>;

impl<T> Map<T> {
    pub fn new(grid: EquirectGrid, values: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} pixels for a {}x{} grid, got {} values and {} mask entries",
                grid.len(),
                grid.width(),
                grid.height(),
                values.len(),
                mask.len()
            )));
        }
        Ok(Self { grid, values, mask })
    }

    /// Map with every pixel valid.
    pub fn from_values(grid: EquirectGrid, values: Vec<T>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(grid, values, mask)
    }

    pub fn from_fn(grid: EquirectGrid, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for row in 0..grid.height() {
            for col in 0..grid.width() {
                values.push(f(row, col));
            }
        }
        Self {
            grid,
            values,
            mask: vec![true; grid.len()],
        }
    }

    #[inline]
    pub fn grid(&self) -> &EquirectGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.mask[index]
    }

    /// Value at a pixel if it is valid.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<&T> {
        let i = self.grid.index(row, col);
        self.mask[i].then(|| &self.values[i])
    }

    #[inline]
    pub fn at(&self, index: usize) -> Option<&T> {
        self.mask[index].then(|| &self.values[index])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of valid pixels in raster order.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Replaces the mask with its intersection with `other`.
    pub fn restrict(mut self, other: &[bool]) -> Result<Self> {
        if other.len() != self.mask.len() {
            return Err(Error::ShapeMismatch("mask length differs from map".into()));
        }
        for (m, &o) in self.mask.iter_mut().zip(other) {
            *m &= o;
        }
        Ok(self)
    }

    pub fn into_parts(self) -> (EquirectGrid, Vec<T>, Vec<bool>) {
        (self.grid, self.values, self.mask)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Map<U> {
        Map {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
            mask: self.mask.clone(),
        }
    }

    pub(crate) fn same_grid<U>(&self, other: &Map<U>, what: &str) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.grid.width(),
                self.grid.height(),
                other.grid.width(),
                other.grid.height()
            )));
        }
        Ok(())
    }
}

impl<T: Clone> Map<T> {
    pub fn filled(grid: EquirectGrid, value: T) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            mask: vec![true; grid.len()],
        }
    }
}

/// Intersection of several equally sized masks.
pub fn joint_mask(masks: &[&[bool]]) -> Vec<bool> {
    let n = masks.first().map_or(0, |m| m.len());
    (0..n).map(|i| masks.iter().all(|m| m[i])).collect()
}

/// Interpolation used when resampling a raster at a continuous position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Values that can be blended by bilinear interpolation.
pub trait Texel: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {}

impl<T> Texel for T where T: Copy + Send + Sync + Add<Output = T> + Mul<f64, Output = T> {}

impl<T: Texel> Map<T> {
    /// Samples the map along direction `(lat, lon)`.
    ///
    /// Longitude wraps, so bilinear sampling across the ±π seam blends
    /// columns `width − 1` and `0`. Rows clamp at the poles. Bilinear sampling
    /// returns `None` if any tap with non-zero weight is invalid.
    pub fn sample(&self, lat: f64, lon: f64, interp: Interp) -> Option<T> {
        let (r, c) = self.grid.lat_lon_to_pixel(lat, lon);
        match interp {
            Interp::Nearest => {
                let row = self.grid.clamp_row((r + 0.5).floor() as isize);
                let col = self.grid.wrap_col((c + 0.5).floor() as isize);
                self.get(row, col).copied()
            }
            Interp::Bilinear => {
                let r0 = r.floor();
                let c0 = c.floor();
                let fr = r - r0;
                let fc = c - c0;
                let (r0, c0) = (r0 as isize, c0 as isize);
                let taps = [
                    (r0, c0, (1.0 - fr) * (1.0 - fc)),
                    (r0, c0 + 1, (1.0 - fr) * fc),
                    (r0 + 1, c0, fr * (1.0 - fc)),
                    (r0 + 1, c0 + 1, fr * fc),
                ];
                let mut acc: Option<T> = None;
                for (tr, tc, w) in taps {
                    if w == 0.0 {
                        continue;
                    }
                    let v = *self.get(self.grid.clamp_row(tr), self.grid.wrap_col(tc))?;
                    acc = Some(match acc {
                        None => v * w,
                        Some(a) => a + v * w,
                    });
                }
                acc
            }
        }
    }

    /// Samples along a (not necessarily unit) direction.
    pub fn sample_direction(&self, dir: &Vec3, interp: Interp) -> Option<T> {
        let (lat, lon) = direction_to_lat_lon(dir);
        self.sample(lat, lon, interp)
    }
}

/// Per-pixel `(φ, λ)` channels.
pub fn geodesic_map(grid: &EquirectGrid) -> LatLonMap {
    Map::from_fn(*grid, |row, col| Vector2::new(grid.latitude(row), grid.longitude(col)))
}

/// Map of unit ray directions.
pub fn ray_map(grid: &EquirectGrid) -> Vec3Map {
    Map::from_fn(*grid, |row, col| grid.ray(row, col))
}

/// Back-projects a ray-distance depth map to 3D points `z · b̂`.
///
/// Valid pixels must carry finite, strictly positive depth.
pub fn back_project(depth: &FloatMap) -> Result<Vec3Map> {
    let grid = *depth.grid();
    let points: Result<Vec<Vec3>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !depth.is_valid(i) {
                return Ok(Vec3::zeros());
            }
            let z = depth.values()[i];
            if !(z.is_finite() && z > 0.0) {
                let (row, col) = grid.row_col(i);
                return Err(Error::InvalidInput(format!(
                    "depth {z} at valid pixel ({row}, {col}) must be positive"
                )));
            }
            Ok(grid.ray_at(i) * z)
        })
        .collect();
    Map::new(grid, points?, depth.mask().to_vec())
}
