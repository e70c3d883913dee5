//! Cube maps and cube → equirectangular resampling.
//!
//! Faces are stored in the order `+x, −x, +y, −y, +z, −z`. Each face is
//! `face_size × face_size`, row-major, row 0 at the top. Texel `(row, col)`
//! has face coordinates `u = 2(col + 0.5)/N − 1`, `v = 2(row + 0.5)/N − 1`
//! and points along:
//!
//! | face | direction      |
//! |------|----------------|
//! | +x   | `( 1, −v, −u)` |
//! | −x   | `(−1, −v,  u)` |
//! | +y   | `( u,  1,  v)` |
//! | −y   | `( u, −1, −v)` |
//! | +z   | `( u, −v,  1)` |
//! | −z   | `(−u, −v, −1)` |
//!
//! This is the usual OpenGL cube map layout.

use rayon::prelude::*;

use super::{EquirectGrid, Interp, Map, Texel, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CubeFace {
    PosX = 0,
    NegX = 1,
    PosY = 2,
    NegY = 3,
    PosZ = 4,
    NegZ = 5,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::PosX,
        CubeFace::NegX,
        CubeFace::PosY,
        CubeFace::NegY,
        CubeFace::PosZ,
        CubeFace::NegZ,
    ];

    /// File-name tag (`px`, `nx`, ...).
    pub fn tag(self) -> &'static str {
        match self {
            CubeFace::PosX => "px",
            CubeFace::NegX => "nx",
            CubeFace::PosY => "py",
            CubeFace::NegY => "ny",
            CubeFace::PosZ => "pz",
            CubeFace::NegZ => "nz",
        }
    }

    /// Point on the face plane for face coordinates `(u, v)`; the major
    /// component has magnitude one. `u`, `v` may leave `[−1, 1]`.
    pub fn direction(self, u: f64, v: f64) -> Vec3 {
        match self {
            CubeFace::PosX => Vec3::new(1.0, -v, -u),
            CubeFace::NegX => Vec3::new(-1.0, -v, u),
            CubeFace::PosY => Vec3::new(u, 1.0, v),
            CubeFace::NegY => Vec3::new(u, -1.0, -v),
            CubeFace::PosZ => Vec3::new(u, -v, 1.0),
            CubeFace::NegZ => Vec3::new(-u, -v, -1.0),
        }
    }

    /// Face pierced by `dir` and its face coordinates `(u, v)`.
    pub fn locate(dir: &Vec3) -> (CubeFace, f64, f64) {
        let (ax, ay, az) = (dir.x.abs(), dir.y.abs(), dir.z.abs());
        if ax >= ay && ax >= az {
            if dir.x > 0.0 {
                (CubeFace::PosX, -dir.z / ax, -dir.y / ax)
            } else {
                (CubeFace::NegX, dir.z / ax, -dir.y / ax)
            }
        } else if ay >= az {
            if dir.y > 0.0 {
                (CubeFace::PosY, dir.x / ay, dir.z / ay)
            } else {
                (CubeFace::NegY, dir.x / ay, -dir.z / ay)
            }
        } else if dir.z > 0.0 {
            (CubeFace::PosZ, dir.x / az, -dir.y / az)
        } else {
            (CubeFace::NegZ, -dir.x / az, -dir.y / az)
        }
    }
}

/// Six square faces of equal size with per-texel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeMap<T> {
    face_size: usize,
    faces: Vec<Vec<T>>,
    masks: Vec<Vec<bool>>,
}

impl<T> CubeMap<T> {
    pub fn new(face_size: usize, faces: Vec<Vec<T>>) -> Result<Self> {
        let masks = faces.iter().map(|f| vec![true; f.len()]).collect();
        Self::with_masks(face_size, faces, masks)
    }

    pub fn with_masks(face_size: usize, faces: Vec<Vec<T>>, masks: Vec<Vec<bool>>) -> Result<Self> {
        if face_size == 0 {
            return Err(Error::InvalidInput("cube face size must be positive".into()));
        }
        if faces.len() != 6 || masks.len() != 6 {
            return Err(Error::ShapeMismatch(format!(
                "cube map needs 6 faces, got {}",
                faces.len()
            )));
        }
        let n = face_size * face_size;
        for (i, (f, m)) in faces.iter().zip(&masks).enumerate() {
            if f.len() != n || m.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "cube face {i} has {} texels, expected {n}",
                    f.len()
                )));
            }
        }
        Ok(Self {
            face_size,
            faces,
            masks,
        })
    }

    /// Builds a cube map by evaluating `f` along every texel direction.
    pub fn from_fn(face_size: usize, f: impl Fn(&Vec3) -> T + Sync) -> Self
    where
        T: Send,
    {
        let faces = CubeFace::ALL
            .iter()
            .map(|&face| {
                (0..face_size * face_size)
                    .into_par_iter()
                    .map(|k| f(&texel_direction(face_size, face, k / face_size, k % face_size)))
                    .collect()
            })
            .collect();
        let masks = vec![vec![true; face_size * face_size]; 6];
        Self {
            face_size,
            faces,
            masks,
        }
    }

    #[inline]
    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn face(&self, face: CubeFace) -> &[T] {
        &self.faces[face as usize]
    }

    pub fn face_mask(&self, face: CubeFace) -> &[bool] {
        &self.masks[face as usize]
    }

    pub fn face_mut(&mut self, face: CubeFace) -> &mut [T] {
        &mut self.faces[face as usize]
    }

    pub fn face_mask_mut(&mut self, face: CubeFace) -> &mut [bool] {
        &mut self.masks[face as usize]
    }

    /// Direction of the centre of texel `(row, col)` on `face`.
    pub fn texel_direction(&self, face: CubeFace, row: usize, col: usize) -> Vec3 {
        texel_direction(self.face_size, face, row, col)
    }

    /// Continuous texel coordinates `(face, row, col)` of a direction.
    pub fn texel_coords(&self, dir: &Vec3) -> (CubeFace, f64, f64) {
        let (face, u, v) = CubeFace::locate(dir);
        let n = self.face_size as f64;
        (face, (v + 1.0) * 0.5 * n - 0.5, (u + 1.0) * 0.5 * n - 0.5)
    }

    /// Nearest texel to `dir`.
    pub fn nearest_texel(&self, dir: &Vec3) -> (CubeFace, usize, usize) {
        let (face, r, c) = self.texel_coords(dir);
        let last = self.face_size as isize - 1;
        let r = ((r + 0.5).floor() as isize).clamp(0, last) as usize;
        let c = ((c + 0.5).floor() as isize).clamp(0, last) as usize;
        (face, r, c)
    }

    fn texel(&self, face: CubeFace, row: usize, col: usize) -> Option<&T> {
        let k = row * self.face_size + col;
        self.masks[face as usize][k].then(|| &self.faces[face as usize][k])
    }

    /// Texel lookup that tolerates indices one step past a face border by
    /// following the virtual texel's direction onto the neighbouring face.
    fn texel_unbounded(&self, face: CubeFace, row: isize, col: isize) -> Option<&T> {
        let n = self.face_size as isize;
        if (0..n).contains(&row) && (0..n).contains(&col) {
            return self.texel(face, row as usize, col as usize);
        }
        let nf = self.face_size as f64;
        let u = 2.0 * (col as f64 + 0.5) / nf - 1.0;
        let v = 2.0 * (row as f64 + 0.5) / nf - 1.0;
        let (f, r, c) = self.nearest_texel(&face.direction(u, v));
        self.texel(f, r, c)
    }
}

impl CubeMap<f64> {
    /// Converts faces storing planar depth (distance along the face axis) to
    /// Euclidean ray distance.
    pub fn planar_to_ray_distance(&mut self) {
        let n = self.face_size;
        for face in CubeFace::ALL {
            for k in 0..n * n {
                let scale = texel_direction(n, face, k / n, k % n).norm();
                self.faces[face as usize][k] *= scale;
            }
        }
    }
}

impl<T: Texel> CubeMap<T> {
    /// Samples the cube map along `dir`.
    ///
    /// Bilinear taps that fall past a face border are fetched from the
    /// adjacent face. If any contributing tap is invalid the nearest texel is
    /// used instead.
    pub fn sample(&self, dir: &Vec3, interp: Interp) -> Option<T> {
        match interp {
            Interp::Nearest => {
                let (f, r, c) = self.nearest_texel(dir);
                self.texel(f, r, c).copied()
            }
            Interp::Bilinear => self.sample_bilinear(dir).or_else(|| self.sample(dir, Interp::Nearest)),
        }
    }

    fn sample_bilinear(&self, dir: &Vec3) -> Option<T> {
        let (face, r, c) = self.texel_coords(dir);
        let r0 = r.floor();
        let c0 = c.floor();
        let (fr, fc) = (r - r0, c - c0);
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
            let v = *self.texel_unbounded(face, tr, tc)?;
            acc = Some(match acc {
                None => v * w,
                Some(a) => a + v * w,
            });
        }
        acc
    }
}

fn texel_direction(face_size: usize, face: CubeFace, row: usize, col: usize) -> Vec3 {
    let n = face_size as f64;
    let u = 2.0 * (col as f64 + 0.5) / n - 1.0;
    let v = 2.0 * (row as f64 + 0.5) / n - 1.0;
    face.direction(u, v)
}

/// Resamples a cube map onto an equirectangular grid.
///
/// Use [`Interp::Bilinear`] for colour and [`Interp::Nearest`] for depth.
pub fn equirect_from_cubemap<T: Texel>(cube: &CubeMap<T>, grid: &EquirectGrid, interp: Interp) -> Map<T> {
    let samples: Vec<Option<T>> = (0..grid.len())
        .into_par_iter()
        .map(|i| cube.sample(&grid.ray_at(i), interp))
        .collect();
    let mask: Vec<bool> = samples.iter().map(Option::is_some).collect();
    let fill = samples.iter().flatten().next().copied();
    let values = match fill {
        Some(f) => samples.into_iter().map(|s| s.unwrap_or(f)).collect(),
        None => {
            // Every texel is invalid; any value works as the masked filler.
            let any = *cube.faces[0].first().expect("cube faces are non-empty");
            vec![any; grid.len()]
        }
    };
    Map::new(*grid, values, mask).expect("sizes follow the grid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_inverts_direction() {
        for face in CubeFace::ALL {
            for &(u, v) in &[(0.0, 0.0), (0.3, -0.7), (-0.9, 0.9), (0.99, 0.5)] {
                let (f, u2, v2) = CubeFace::locate(&face.direction(u, v));
                assert_eq!(f, face);
                assert!((u - u2).abs() < 1e-15 && (v - v2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn faces_are_right_handed_images() {
        // Every face shares the handedness of the equirectangular image,
        // where longitude grows to the right and latitude falls downwards.
        for face in CubeFace::ALL {
            let c = face.direction(0.0, 0.0);
            let right = face.direction(0.1, 0.0) - c;
            let down = face.direction(0.0, 0.1) - c;
            assert!(right.cross(&down).dot(&c) < 0.0, "{face:?}");
        }
    }

    #[test]
    fn constant_cube_resamples_to_constant() {
        let cube = CubeMap::from_fn(8, |_| 5.0);
        let grid = EquirectGrid::new(16).unwrap();
        for interp in [Interp::Nearest, Interp::Bilinear] {
            let m = equirect_from_cubemap(&cube, &grid, interp);
            assert!(m.values().iter().all(|&v| (v - 5.0).abs() < 1e-12));
            assert_eq!(m.valid_count(), grid.len());
        }
    }

    #[test]
    fn planar_depth_conversion() {
        // A cube room of half-size 1 seen from its centre: planar depth is 1.
        let mut cube = CubeMap::from_fn(4, |_| 1.0);
        cube.planar_to_ray_distance();
        let d = cube.texel_direction(CubeFace::PosZ, 0, 0);
        assert!((cube.face(CubeFace::PosZ)[0] - d.norm()).abs() < 1e-15);
    }

    #[test]
    fn invalid_texels_are_masked_under_nearest() {
        let mut cube = CubeMap::from_fn(4, |_| 1.0);
        cube.face_mask_mut(CubeFace::PosZ).fill(false);
        let grid = EquirectGrid::new(8).unwrap();
        let m = equirect_from_cubemap(&cube, &grid, Interp::Nearest);
        let front = grid.index(4, 8);
        assert!(!m.is_valid(front));
        assert!(m.is_valid(grid.index(4, 0)));
    }
}
