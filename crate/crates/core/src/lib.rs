//! panoplane: the non-learned half of plane-aware single-view 360° reconstruction.
//!
//! The crate is organised the way data flows through it:
//!
//! 1. [`geom`] – equirectangular grids, per-pixel rays, back-projection and
//!    cube map resampling.
//! 2. [`icosphere`] – subdivided icosahedra, vertex resampling, normal
//!    derivation from depth and depth-scaled output meshes.
//! 3. [`curvature`] – principal curvature of a normal map and the plane
//!    boundary map derived from it.
//! 4. [`loss`] – the plane-aware multi-task loss (value and analytic
//!    gradients) plus the L2 + smoothness baseline.
//! 5. [`metrics`] – depth and surface normal evaluation.
//! 6. [`segmentation`], [`planefit`] and [`pipeline`] – Otsu + connected
//!    components, per-segment plane fitting and the pop-up reconstruction.
//! 7. [`synth`] – analytic piecewise-planar scenes used as ground truth.
//! 8. [`mapio`] – PFM, PNG, OBJ and PLY readers and writers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod error;
pub mod geom;
pub mod icosphere;
pub mod loss;
pub mod mapio;
pub mod metrics;
pub mod pipeline;
pub mod planefit;
pub mod reduce;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{EquirectGrid, FloatMap, Interp, LatLonMap, Map, Vec3, Vec3Map};
