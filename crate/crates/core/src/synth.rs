//! Analytic piecewise-planar scenes with exact ground truth.
//!
//! The camera sits at the origin. Each plane is stored as `nᵀX + d = 0` with
//! `d > 0`, which makes `n` face the camera. Room walls are unbounded (the
//! room is convex and contains the camera); box faces carry a convex polygon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{CubeFace, CubeMap, EquirectGrid, FloatMap, Map, Vec3, Vec3Map};
use crate::mapio::palette_color;
use crate::segmentation::LabelMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePlane {
    pub normal: Vec3,
    pub distance: f64,
    /// Convex polygon in camera coordinates, on the plane.
    pub polygon: Option<Vec<Vec3>>,
    pub color: Vec3,
}

impl ScenePlane {
    fn contains(&self, p: &Vec3) -> bool {
        let Some(poly) = &self.polygon else {
            return true;
        };
        let scale = poly.iter().map(|v| v.norm()).fold(1.0, f64::max);
        let tol = 1e-12 * scale * scale;
        let mut sign = 0.0;
        for (k, a) in poly.iter().enumerate() {
            let b = &poly[(k + 1) % poly.len()];
            let s = self.normal.dot(&(b - a).cross(&(p - a)));
            if s.abs() <= tol {
                continue;
            }
            if sign == 0.0 {
                sign = s.signum();
            } else if s.signum() != sign {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthScene {
    pub planes: Vec<ScenePlane>,
}

/// Axis-aligned box resting on the floor, in room-centred coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    /// Footprint centre `[x, z]`.
    pub center: [f64; 2],
    /// `[sx, sy, sz]` with `sy` the height.
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// Room width (x), height (y) and length (z).
    pub dims: [f64; 3],
    /// Camera position relative to the room centre.
    #[serde(default)]
    pub camera_offset: [f64; 3],
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub n: [f64; 3],
    pub d: f64,
    #[serde(default)]
    pub polygon: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub color: Option<[f64; 3]>,
}

/// Scene description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSpec {
    Room(RoomSpec),
    Planes(Vec<PlaneSpec>),
}

impl SceneSpec {
    pub fn build(&self) -> Result<SynthScene> {
        match self {
            SceneSpec::Room(r) => make_room(r.dims, r.camera_offset, &r.boxes),
            SceneSpec::Planes(p) => SynthScene::from_planes(p),
        }
    }
}

fn default_color(k: usize) -> Vec3 {
    let [r, g, b] = palette_color(k as u32 + 1);
    Vec3::new(r as f64, g as f64, b as f64) / 255.0
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SynthScene {
    pub fn from_planes(specs: &[PlaneSpec]) -> Result<Self> {
        let mut planes = Vec::with_capacity(specs.len());
        for (k, s) in specs.iter().enumerate() {
            let n = v3(s.n);
            let len = n.norm();
            if !(len > 0.0) || !s.d.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "plane {k}: zero normal or non-finite distance"
                )));
            }
            let (normal, distance) = (n / len, s.d / len);
            if !(distance > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "plane {k}: d must be positive so the normal faces the camera"
                )));
            }
            let polygon = match &s.polygon {
                Some(p) if p.len() < 3 => {
                    return Err(Error::InvalidInput(format!(
                        "plane {k}: polygon needs 3 or more vertices"
                    )))
                }
                Some(p) => Some(p.iter().map(|&v| v3(v)).collect()),
                None => None,
            };
            planes.push(ScenePlane {
                normal,
                distance,
                polygon,
                color: s.color.map(v3).unwrap_or_else(|| default_color(k)),
            });
        }
        Ok(Self { planes })
    }

    /// Nearest positive hit along `dir`: `(plane index, distance)`.
    pub fn intersect(&self, dir: &Vec3) -> Option<(usize, f64)> {
        let b = dir.normalize();
        let mut best: Option<(usize, f64)> = None;
        for (k, p) in self.planes.iter().enumerate() {
            let cos = p.normal.dot(&b);
            if cos >= 0.0 {
                continue;
            }
            let t = -p.distance / cos;
            if !(t > 0.0 && t.is_finite()) || best.is_some_and(|(_, bt)| t >= bt) {
                continue;
            }
            if p.contains(&(b * t)) {
                best = Some((k, t));
            }
        }
        best
    }
}

/// Adds one axis-aligned plane through `point` with outward normal `axis`,
/// flipped so that `d > 0`.
fn oriented(axis: Vec3, point: &Vec3, polygon: Option<Vec<Vec3>>, color: Vec3) -> Result<ScenePlane> {
    let d = -axis.dot(point);
    if d.abs() < 1e-9 {
        return Err(Error::InvalidInput("camera lies in the plane of a box face".into()));
    }
    let (normal, distance) = if d > 0.0 { (axis, d) } else { (-axis, -d) };
    Ok(ScenePlane {
        normal,
        distance,
        polygon,
        color,
    })
}

/// A cuboid room (`dims = [w, h, l]`) with the camera at `camera_offset`
/// from its centre, plus boxes standing on its floor.
pub fn make_room(dims: [f64; 3], camera_offset: [f64; 3], boxes: &[BoxSpec]) -> Result<SynthScene> {
    if dims.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "room dimensions {dims:?} must be positive"
        )));
    }
    let half = v3(dims) / 2.0;
    let cam = v3(camera_offset);
    if (0..3).any(|a| cam[a].abs() >= half[a]) {
        return Err(Error::InvalidInput(format!(
            "camera offset {camera_offset:?} is outside the room"
        )));
    }
    // Room centre in camera coordinates.
    let c = -cam;
    let mut planes = Vec::with_capacity(6 + 5 * boxes.len());
    let axes = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    for (k, axis) in axes.iter().enumerate() {
        let wall = c + axis.component_mul(&half);
        // Inward-facing walls: camera side is the room interior.
        planes.push(oriented(*axis, &wall, None, default_color(k))?);
    }

    let floor = c.y - half.y;
    for (b, spec) in boxes.iter().enumerate() {
        let [sx, sy, sz] = spec.size;
        if [sx, sy, sz].iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "box {b}: size {:?} must be positive",
                spec.size
            )));
        }
        let lo = Vec3::new(c.x + spec.center[0] - sx / 2.0, floor, c.z + spec.center[1] - sz / 2.0);
        let hi = Vec3::new(lo.x + sx, floor + sy, lo.z + sz);
        let room_lo = c - half;
        let room_hi = c + half;
        if (0..3).any(|a| lo[a] < room_lo[a] - 1e-12 || hi[a] > room_hi[a] + 1e-12) {
            return Err(Error::InvalidInput(format!("box {b} does not fit inside the room")));
        }
        if (0..3).all(|a| lo[a] < 0.0 && hi[a] > 0.0) {
            return Err(Error::InvalidInput(format!("camera is inside box {b}")));
        }
        let corner = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let faces: [(Vec3, Vec3, [Vec3; 4]); 5] = [
            (
                Vec3::y(),
                hi,
                [
                    corner(lo.x, hi.y, lo.z),
                    corner(hi.x, hi.y, lo.z),
                    corner(hi.x, hi.y, hi.z),
                    corner(lo.x, hi.y, hi.z),
                ],
            ),
            (
                Vec3::x(),
                hi,
                [
                    corner(hi.x, lo.y, lo.z),
                    corner(hi.x, hi.y, lo.z),
                    corner(hi.x, hi.y, hi.z),
                    corner(hi.x, lo.y, hi.z),
                ],
            ),
            (
                -Vec3::x(),
                lo,
                [
                    corner(lo.x, lo.y, lo.z),
                    corner(lo.x, hi.y, lo.z),
                    corner(lo.x, hi.y, hi.z),
                    corner(lo.x, lo.y, hi.z),
                ],
            ),
            (
                Vec3::z(),
                hi,
                [
                    corner(lo.x, lo.y, hi.z),
                    corner(hi.x, lo.y, hi.z),
                    corner(hi.x, hi.y, hi.z),
                    corner(lo.x, hi.y, hi.z),
                ],
            ),
            (
                -Vec3::z(),
                lo,
                [
                    corner(lo.x, lo.y, lo.z),
                    corner(hi.x, lo.y, lo.z),
                    corner(hi.x, hi.y, lo.z),
                    corner(lo.x, hi.y, lo.z),
                ],
            ),
        ];
        for (axis, point, poly) in faces {
            let k = planes.len();
            planes.push(oriented(axis, &point, Some(poly.to_vec()), default_color(k))?);
        }
    }
    Ok(SynthScene { planes })
}

/// Exact ground truth of a scene on an equirectangular grid.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub depth: FloatMap,
    pub normals: Vec3Map,
    /// 1 where a 4-neighbour (wrapping in longitude) carries another label.
    pub boundary: FloatMap,
    /// Hit plane index + 1.
    pub labels: LabelMap,
    pub rgb: Vec3Map,
}

pub fn render_gt(scene: &SynthScene, grid: &EquirectGrid) -> Result<GroundTruth> {
    let hits: Vec<Option<(usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| scene.intersect(&grid.ray_at(i)))
        .collect();
    if let Some(i) = hits.iter().position(Option::is_none) {
        let (r, c) = grid.row_col(i);
        return Err(Error::InvalidInput(format!("ray at pixel ({r}, {c}) hits no plane")));
    }
    let hits: Vec<(usize, f64)> = hits.into_iter().flatten().collect();
    let labels: Vec<u32> = hits.iter().map(|&(k, _)| k as u32 + 1).collect();
    let boundary = (0..grid.len())
        .map(|i| {
            if grid.neighbors4(i, true).any(|j| labels[j] != labels[i]) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let plane = |i: usize| &scene.planes[hits[i].0];
    Ok(GroundTruth {
        depth: Map::from_values(*grid, hits.iter().map(|h| h.1).collect())?,
        normals: Map::from_values(*grid, (0..grid.len()).map(|i| plane(i).normal).collect())?,
        boundary: Map::from_values(*grid, boundary)?,
        rgb: Map::from_values(*grid, (0..grid.len()).map(|i| plane(i).color).collect())?,
        labels: LabelMap::new(*grid, labels)?,
    })
}

/// Ray-distance depth and flat colour cube maps of a scene.
pub fn render_cubemap(scene: &SynthScene, face_size: usize) -> Result<(CubeMap<f64>, CubeMap<Vec3>)> {
    if face_size == 0 {
        return Err(Error::InvalidInput("cube face size must be positive".into()));
    }
    let hits = CubeMap::from_fn(face_size, |d| scene.intersect(d));
    let mut depth = Vec::with_capacity(6);
    let mut rgb = Vec::with_capacity(6);
    for face in CubeFace::ALL {
        let mut dz = Vec::with_capacity(face_size * face_size);
        let mut dc = Vec::with_capacity(face_size * face_size);
        for h in hits.face(face) {
            let (k, t) =
                h.ok_or_else(|| Error::InvalidInput(format!("a texel of face {} hits no plane", face.tag())))?;
            dz.push(t);
            dc.push(scene.planes[k].color);
        }
        depth.push(dz);
        rgb.push(dc);
    }
    Ok((CubeMap::new(face_size, depth)?, CubeMap::new(face_size, rgb)?))
}
