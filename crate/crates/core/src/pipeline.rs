//! End-to-end flows: ground-truth derivation from cube maps and pop-up
//! reconstruction from predicted maps.

use serde::{Deserialize, Serialize};

use crate::curvature::{boundary_map, curvature_map, CurvatureMap, Differencing};
use crate::geom::{equirect_from_cubemap, CubeMap, EquirectGrid, FloatMap, Interp, Vec3, Vec3Map};
use crate::icosphere::{
    build_icosphere, derive_normals_from_vertex_depths, mesh_from_depth, ScaledMesh, DEFAULT_LEVEL,
};
use crate::loss::LossConfig;
use crate::planefit::{fit_all, FitConfig, FitOutcome};
use crate::segmentation::{segment_planes, LabelMap, SegmentConfig};
use crate::Result;

/// Everything configurable, as read from a JSON config file. Missing fields
/// take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ico_level: u32,
    /// Cube map depth stores planar z rather than ray distance.
    pub planar_depth: bool,
    pub differencing: Differencing,
    pub segment: SegmentConfig,
    pub fit: FitConfig,
    pub loss: LossConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ico_level: DEFAULT_LEVEL,
            planar_depth: false,
            differencing: Differencing::default(),
            segment: SegmentConfig::default(),
            fit: FitConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ico_level > 10 {
            return Err(crate::Error::InvalidConfig(format!(
                "icosphere level {} is too large (max 10)",
                self.ico_level
            )));
        }
        self.fit.ransac.validate()?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone)]
pub struct DerivedGt {
    pub rgb: Option<Vec3Map>,
    pub depth: FloatMap,
    pub normals: Vec3Map,
    pub curvature: CurvatureMap,
    pub boundary: FloatMap,
}

/// Cube map depth (+ colour) → equirectangular depth, normals, curvature and
/// boundary maps. Depth is resampled nearest, colour bilinearly. Normals come
/// from icosphere vertex depths read bilinearly from the cube itself, since
/// nearest-resampled depth is too coarse to difference.
pub fn derive_gt(
    depth: &CubeMap<f64>,
    rgb: Option<&CubeMap<Vec3>>,
    grid: &EquirectGrid,
    cfg: &PipelineConfig,
) -> Result<DerivedGt> {
    let mut cube = depth.clone();
    if cfg.planar_depth {
        cube.planar_to_ray_distance();
    }
    let depth = equirect_from_cubemap(&cube, grid, Interp::Nearest);
    let rgb = rgb.map(|c| equirect_from_cubemap(c, grid, Interp::Bilinear));
    let mesh = build_icosphere(cfg.ico_level);
    let vertex_depths: Vec<Option<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| cube.sample(v, Interp::Bilinear))
        .collect();
    let normals = derive_normals_from_vertex_depths(&vertex_depths, &mesh, grid);
    let curvature = curvature_map(&normals, cfg.differencing);
    let boundary = boundary_map(&curvature);
    Ok(DerivedGt {
        rgb,
        depth,
        normals,
        curvature,
        boundary,
    })
}

#[derive(Debug, Clone)]
pub struct PopupResult {
    pub labels: LabelMap,
    pub fit: FitOutcome,
    pub mesh: ScaledMesh,
}

/// Segments the boundary map, fits a plane per segment, projects depth onto
/// the planes and meshes the result on an icosphere.
pub fn popup(
    rgb: Option<&Vec3Map>,
    depth: &FloatMap,
    normals: &Vec3Map,
    boundary: &FloatMap,
    cfg: &PipelineConfig,
) -> Result<PopupResult> {
    depth.same_grid(normals, "depth vs normals")?;
    depth.same_grid(boundary, "depth vs boundary")?;
    if let Some(rgb) = rgb {
        depth.same_grid(rgb, "depth vs rgb")?;
    }
    let labels = segment_planes(boundary, &cfg.segment)?;
    log::info!("{} segments", labels.count());
    let fit = fit_all(&labels, depth, normals, &cfg.fit)?;
    let mesh = mesh_from_depth(&fit.adjusted, rgb, cfg.ico_level)?;
    Ok(PopupResult { labels, fit, mesh })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_room, render_gt};

    #[test]
    fn config_rejects_unknown_fields() {
        let ok: PipelineConfig = serde_json::from_str(r#"{"ico_level": 5, "fit": {"ransac": {"seed": 3}}}"#).unwrap();
        assert_eq!(ok.ico_level, 5);
        assert_eq!(ok.fit.ransac.seed, 3);
        assert_eq!(ok.fit.ransac.iterations, 100);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"icolevel": 5}"#).is_err());
    }

    #[test]
    fn constant_cube_is_crease_free() {
        let cube = CubeMap::from_fn(32, |_| 2.0);
        let grid = EquirectGrid::new(32).unwrap();
        let cfg = PipelineConfig {
            ico_level: 5,
            ..Default::default()
        };
        let gt = derive_gt(&cube, None, &grid, &cfg).unwrap();
        // A sphere has no crease: away from the poles every pixel reads close
        // to the uniform value √2 of a unit sphere, up to faceting noise.
        for i in gt.boundary.valid_indices() {
            if grid.latitude(grid.row_col(i).0).abs() < 1.0 {
                let b = gt.boundary.values()[i];
                assert!((b / 2f64.sqrt() - 1.0).abs() < 0.2, "boundary {b} at pixel {i}");
            }
        }
    }

    #[test]
    fn popup_on_exact_room() {
        let scene = make_room([4.0, 3.0, 5.0], [0.3, 0.2, -0.4], &[]).unwrap();
        let grid = EquirectGrid::new(64).unwrap();
        let gt = render_gt(&scene, &grid).unwrap();
        let cfg = PipelineConfig {
            ico_level: 4,
            segment: SegmentConfig {
                min_size: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = popup(Some(&gt.rgb), &gt.depth, &gt.normals, &gt.boundary, &cfg).unwrap();
        assert_eq!(out.labels.count(), 6);
        for (a, b) in out.fit.adjusted.values().iter().zip(gt.depth.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
