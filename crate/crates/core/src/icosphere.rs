//! Subdivided icosahedral meshes.
//!
//! An [`IcoMesh`] at level `k` has `10·4^k + 2` unit vertices and `20·4^k`
//! counter-clockwise (seen from outside) faces. Subdivision splits every
//! triangle at its edge midpoints and pushes the midpoints back to the
//! sphere. Because each midpoint lies on the great circle through its edge,
//! the four children tile their parent's spherical triangle exactly, which
//! makes ray → face lookup a simple descent through the levels.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::geom::{direction_to_lat_lon, FloatMap, Interp, Map, Texel, Vec3, Vec3Map};
use crate::{Error, Result};

/// Default level for 256×512 maps (163,842 vertices).
pub const DEFAULT_LEVEL: u32 = 7;

#[derive(Debug, Clone)]
pub struct IcoMesh {
    level: u32,
    vertices: Vec<Vec3>,
    /// `levels[l]` holds the faces after `l` subdivisions. Children of face
    /// `f` at level `l` are faces `4f..4f + 4` at level `l + 1`.
    levels: Vec<Vec<[u32; 3]>>,
}

fn base_icosahedron() -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for f in &mut faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    (vertices, faces)
}

/// Builds the level-`level` icosphere.
pub fn build_icosphere(level: u32) -> IcoMesh {
    let (mut vertices, base) = base_icosahedron();
    let final_vertices = 10 * 4usize.pow(level) + 2;
    vertices.reserve(final_vertices - vertices.len());
    let mut levels = vec![base];
    let mut midpoints: HashMap<(u32, u32), u32> = HashMap::with_capacity(final_vertices);

    for _ in 0..level {
        let parent = levels.last().expect("level 0 exists");
        let mut children = Vec::with_capacity(parent.len() * 4);
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };
        for &[a, b, c] in parent {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            children.push([a, ab, ca]);
            children.push([b, bc, ab]);
            children.push([c, ca, bc]);
            children.push([ab, bc, ca]);
        }
        levels.push(children);
    }

    IcoMesh {
        level,
        vertices,
        levels,
    }
}

impl IcoMesh {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        self.levels.last().expect("level 0 exists")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces().len()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::with_capacity(self.face_count() * 3 / 2);
        for &[a, b, c] in self.faces() {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                edges.insert((p.min(q), p.max(q)));
            }
        }
        edges.len()
    }

    /// Index of the face whose spherical triangle contains `dir`.
    pub fn locate(&self, dir: &Vec3) -> usize {
        let score = |face: &[u32; 3]| -> f64 {
            let [a, b, c] = face.map(|i| &self.vertices[i as usize]);
            a.cross(b).dot(dir).min(b.cross(c).dot(dir)).min(c.cross(a).dot(dir))
        };
        let best = |candidates: std::ops::Range<usize>, faces: &[[u32; 3]]| -> usize {
            let mut best = candidates.start;
            let mut best_score = f64::NEG_INFINITY;
            for f in candidates {
                let s = score(&faces[f]);
                if s > best_score {
                    best_score = s;
                    best = f;
                }
            }
            best
        };
        let mut face = best(0..20, &self.levels[0]);
        for faces in &self.levels[1..] {
            face = best(4 * face..4 * face + 4, faces);
        }
        face
    }
}

/// Samples a map at every vertex of `mesh`. Invalid samples are `None`.
pub fn sample_at_vertices<T: Texel>(map: &Map<T>, mesh: &IcoMesh, interp: Interp) -> Vec<Option<T>> {
    mesh.vertices()
        .par_iter()
        .map(|v| {
            let (lat, lon) = direction_to_lat_lon(v);
            map.sample(lat, lon, interp)
        })
        .collect()
}

/// Unit normal of a triangle of 3D points, oriented towards the camera at the
/// origin. `None` for degenerate (collinear) triangles.
pub fn camera_facing_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Vec3> {
    let e1 = b - a;
    let e2 = c - a;
    let cross = e1.cross(&e2);
    let scale = e1.norm_squared().max(e2.norm_squared());
    let len = cross.norm();
    if !(len > 1e-12 * scale) || !len.is_finite() {
        return None;
    }
    let n = cross / len;
    let centroid = a + b + c;
    Some(if n.dot(&centroid) > 0.0 { -n } else { n })
}

/// Derives a normal map from a depth map.
///
/// Depth is resampled to the icosphere vertices, each vertex is scaled by its
/// depth, each face gets the camera-facing normal of its scaled triangle, and
/// every output pixel takes the normal of the face its ray pierces. Faces with
/// an invalid or degenerate vertex leave their pixels masked.
pub fn derive_normals_from_depth(depth: &FloatMap, level: u32) -> Vec3Map {
    derive_normals_with_mesh(depth, &build_icosphere(level))
}

pub fn derive_normals_with_mesh(depth: &FloatMap, mesh: &IcoMesh) -> Vec3Map {
    derive_normals_from_vertex_depths(&sample_at_vertices(depth, mesh, Interp::Bilinear), mesh, depth.grid())
}

/// Same as [`derive_normals_with_mesh`] with the vertex depths already
/// sampled, e.g. straight from a cube map.
pub fn derive_normals_from_vertex_depths(
    depths: &[Option<f64>],
    mesh: &IcoMesh,
    grid: &crate::EquirectGrid,
) -> Vec3Map {
    let points: Vec<Option<Vec3>> = depths
        .iter()
        .zip(mesh.vertices())
        .map(|(d, v)| d.filter(|&z| z > 0.0 && z.is_finite()).map(|z| v * z))
        .collect();
    let face_normals: Vec<Option<Vec3>> = mesh
        .faces()
        .par_iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| points[i as usize]);
            camera_facing_normal(&a?, &b?, &c?)
        })
        .collect();
    render_face_values(mesh, &face_normals, grid)
}

/// Rasterises per-face values onto an equirectangular grid by ray → face
/// lookup.
pub fn render_face_values<T: Copy + Send + Sync + Default>(
    mesh: &IcoMesh,
    face_values: &[Option<T>],
    grid: &crate::EquirectGrid,
) -> Map<T> {
    let samples: Vec<Option<T>> = (0..grid.len())
        .into_par_iter()
        .map(|i| face_values[mesh.locate(&grid.ray_at(i))])
        .collect();
    let mask = samples.iter().map(Option::is_some).collect();
    let values = samples.into_iter().map(Option::unwrap_or_default).collect();
    Map::new(*grid, values, mask).expect("sizes follow the grid")
}

/// An icosphere whose vertices are scaled radially by depth.
#[derive(Debug, Clone)]
pub struct ScaledMesh {
    pub mesh: IcoMesh,
    /// Per-vertex radius in meters; `None` marks an invalid vertex.
    pub scales: Vec<Option<f64>>,
    pub colors: Option<Vec<Option<Vec3>>>,
}

impl ScaledMesh {
    pub fn positions(&self) -> Vec<Option<Vec3>> {
        self.mesh
            .vertices()
            .iter()
            .zip(&self.scales)
            .map(|(v, s)| s.map(|s| v * s))
            .collect()
    }

    /// Faces whose three vertices are valid.
    pub fn valid_faces(&self) -> Vec<[u32; 3]> {
        self.mesh
            .faces()
            .iter()
            .filter(|f| f.iter().all(|&i| self.scales[i as usize].is_some()))
            .copied()
            .collect()
    }
}

/// Builds a depth-scaled mesh: nearest-sampled depth per vertex and, when
/// given, bilinear-sampled colour.
pub fn mesh_from_depth(depth: &FloatMap, rgb: Option<&Vec3Map>, level: u32) -> Result<ScaledMesh> {
    if let Some(rgb) = rgb {
        depth.same_grid(rgb, "depth and rgb grids differ")?;
    }
    mesh_from_depth_with(depth, rgb, build_icosphere(level))
}

pub fn mesh_from_depth_with(depth: &FloatMap, rgb: Option<&Vec3Map>, mesh: IcoMesh) -> Result<ScaledMesh> {
    let scales = sample_at_vertices(depth, &mesh, Interp::Nearest)
        .into_iter()
        .map(|d| d.filter(|&z| z > 0.0 && z.is_finite()))
        .collect();
    let colors = rgb.map(|rgb| sample_at_vertices(rgb, &mesh, Interp::Bilinear));
    if let Some(c) = &colors {
        if c.len() != mesh.vertex_count() {
            return Err(Error::ShapeMismatch("colour samples".into()));
        }
    }
    Ok(ScaledMesh { mesh, scales, colors })
}
