use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use panoplane::curvature::{boundary_map, curvature_map};
use panoplane::geom::{CubeFace, CubeMap};
use panoplane::loss::gradcheck::{run_gradient_suite, GradCheckOptions};
use panoplane::loss::{loss_total, PredictionSet, ScalePrediction, TargetMaps, TargetSet};
use panoplane::mapio::{self, TriMesh};
use panoplane::metrics::{depth_metrics, depth_threshold, median_scale, normal_metrics, valid_mask};
use panoplane::pipeline::{derive_gt, popup, PipelineConfig};
use panoplane::segmentation::segment_planes;
use panoplane::synth::{render_cubemap, render_gt, BoxSpec, RoomSpec, SceneSpec};
use panoplane::{EquirectGrid, Vec3};
use serde::Serialize;

use crate::{Cli, Command, Common, CubeInput, FitArgs, LossArgs, SegmentArgs};

/// A numeric check ran but did not meet its tolerance.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

const DEFAULT_HEIGHT: usize = 256;

struct Ctx {
    cfg: PipelineConfig,
    grid: EquirectGrid,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        let p = self.path(name);
        fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))
    }
}

fn output_grid(common: &Common) -> Result<EquirectGrid> {
    let grid = match (common.width, common.height) {
        (None, None) => EquirectGrid::new(DEFAULT_HEIGHT)?,
        (None, Some(h)) => EquirectGrid::new(h)?,
        (Some(w), None) => EquirectGrid::from_dims(w, w / 2)?,
        (Some(w), Some(h)) => EquirectGrid::from_dims(w, h)?,
    };
    Ok(grid)
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| panoplane::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(panoplane::Error::from)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(k) = common.ico_level {
        cfg.ico_level = k;
    }
    if let Some(s) = common.seed {
        cfg.fit.ransac.seed = s;
    }
    Ok(cfg)
}

fn apply_segment(cfg: &mut PipelineConfig, a: &SegmentArgs) {
    if let Some(b) = a.bins {
        cfg.segment.bins = b;
    }
    if let Some(m) = a.min_size {
        cfg.segment.min_size = m;
    }
    if a.no_wrap {
        cfg.segment.wrap = false;
    }
}

fn apply_fit(cfg: &mut PipelineConfig, a: &FitArgs) {
    if let Some(i) = a.iterations {
        cfg.fit.ransac.iterations = i;
    }
    if let Some(t) = a.inlier_tol {
        cfg.fit.ransac.inlier_tol = t;
    }
    if let Some(f) = a.min_inlier_fraction {
        cfg.fit.min_inlier_fraction = f;
    }
}

fn pair(v: &Option<Vec<f64>>, slot: &mut [f64; 2]) {
    if let Some(v) = v {
        slot.copy_from_slice(&v[..2]);
    }
}

fn apply_loss(cfg: &mut PipelineConfig, a: &LossArgs) {
    pair(&a.alpha, &mut cfg.loss.alpha);
    pair(&a.beta, &mut cfg.loss.beta);
    pair(&a.gamma, &mut cfg.loss.gamma);
    pair(&a.zeta, &mut cfg.loss.zeta);
    if let Some(e) = a.eta {
        cfg.loss.eta = e;
    }
    if let Some(f) = a.berhu_fraction {
        cfg.loss.berhu_fraction = f;
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Popup { segment, fit, .. } => {
            apply_segment(&mut cfg, segment);
            apply_fit(&mut cfg, fit);
        }
        Command::Segment { segment, .. } => apply_segment(&mut cfg, segment),
        Command::DeriveGt { input, differencing } => {
            cfg.planar_depth |= input.planar_depth;
            if let Some(d) = differencing {
                cfg.differencing = (*d).into();
            }
        }
        Command::Resample { input } => cfg.planar_depth |= input.planar_depth,
        Command::Curvature {
            differencing: Some(d), ..
        } => cfg.differencing = (*d).into(),
        Command::LossCheck { loss, .. } => apply_loss(&mut cfg, loss),
        _ => {}
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.common.out_dir).map_err(|e| panoplane::Error::Io {
        path: cli.common.out_dir.clone(),
        source: e,
    })?;
    let ctx = Ctx {
        cfg,
        grid: output_grid(&cli.common)?,
        out: cli.common.out_dir.clone(),
    };

    match cli.command {
        Command::Resample { input } => resample(&ctx, &input),
        Command::DeriveGt { input, .. } => derive(&ctx, &input),
        Command::Curvature { normals, .. } => curvature(&ctx, &normals),
        Command::LossCheck {
            samples,
            step,
            margin,
            tolerance,
            ..
        } => loss_check(&ctx, samples, step, margin, tolerance),
        Command::Eval {
            pred_depth,
            gt_depth,
            pred_normals,
            gt_normals,
            t_depth,
        } => eval(&ctx, &pred_depth, &gt_depth, pred_normals.zip(gt_normals), t_depth),
        Command::Segment { boundary, .. } => segment(&ctx, &boundary),
        Command::Popup {
            depth,
            normals,
            boundary,
            rgb,
            ..
        } => run_popup(&ctx, &depth, &normals, &boundary, rgb.as_deref()),
        Command::Synth { scene, cube_size } => synth(&ctx, scene.as_deref(), cube_size),
    }
}

/// Checks that a face is square and matches the size seen so far.
fn check_face(size: &mut Option<usize>, w: usize, h: usize, p: &Path) -> Result<()> {
    if w != h {
        bail!(panoplane::Error::ShapeMismatch(format!(
            "{} is not square",
            p.display()
        )));
    }
    match *size {
        Some(s) if s != w => bail!(panoplane::Error::ShapeMismatch(format!(
            "{} has face size {w}, expected {s}",
            p.display()
        ))),
        _ => *size = Some(w),
    }
    Ok(())
}

fn read_cube(input: &CubeInput) -> Result<(CubeMap<f64>, Option<CubeMap<Vec3>>)> {
    let mut depth = Vec::with_capacity(6);
    let mut size = None;
    for face in CubeFace::ALL {
        let p = input.cube_dir.join(format!("depth_{}.pfm", face.tag()));
        let img = mapio::read_pfm(&p)?;
        if img.channels != 1 {
            bail!(panoplane::Error::ShapeMismatch(format!(
                "{} must be single-channel",
                p.display()
            )));
        }
        check_face(&mut size, img.width, img.height, &p)?;
        depth.push(img.data.iter().map(|&v| v as f64).collect::<Vec<_>>());
    }
    let masks = depth
        .iter()
        .map(|f| f.iter().map(|v| v.is_finite() && *v > 0.0).collect())
        .collect();
    let n = size.expect("six faces read");
    let depth = CubeMap::with_masks(n, depth, masks)?;

    let rgb_paths: Vec<PathBuf> = CubeFace::ALL
        .iter()
        .map(|f| input.cube_dir.join(format!("rgb_{}.png", f.tag())))
        .collect();
    let present = rgb_paths.iter().filter(|p| p.exists()).count();
    let rgb = match present {
        0 => None,
        6 => {
            let mut faces = Vec::with_capacity(6);
            for p in &rgb_paths {
                let (w, h, data) = mapio::read_rgb_image(p)?;
                check_face(&mut size, w, h, p)?;
                faces.push(data);
            }
            Some(CubeMap::new(n, faces)?)
        }
        k => bail!(panoplane::Error::InvalidInput(format!(
            "found {k} of 6 rgb_<face>.png files"
        ))),
    };
    Ok((depth, rgb))
}

fn resample(ctx: &Ctx, input: &CubeInput) -> Result<()> {
    let (mut depth, rgb) = read_cube(input)?;
    if ctx.cfg.planar_depth {
        depth.planar_to_ray_distance();
    }
    let eq = panoplane::geom::equirect_from_cubemap(&depth, &ctx.grid, panoplane::Interp::Nearest);
    mapio::write_scalar_pfm(&ctx.path("depth.pfm"), &eq)?;
    if let Some(rgb) = rgb {
        let eq = panoplane::geom::equirect_from_cubemap(&rgb, &ctx.grid, panoplane::Interp::Bilinear);
        mapio::write_rgb_png(&ctx.path("rgb.png"), &eq)?;
    }
    Ok(())
}

fn derive(ctx: &Ctx, input: &CubeInput) -> Result<()> {
    let (depth, rgb) = read_cube(input)?;
    let gt = derive_gt(&depth, rgb.as_ref(), &ctx.grid, &ctx.cfg)?;
    if let Some(rgb) = &gt.rgb {
        mapio::write_rgb_png(&ctx.path("rgb.png"), rgb)?;
    }
    mapio::write_scalar_pfm(&ctx.path("depth.pfm"), &gt.depth)?;
    mapio::write_vec3_pfm(&ctx.path("normals.pfm"), &gt.normals)?;
    mapio::write_curvature_pfm(&ctx.path("curvature.pfm"), &gt.curvature)?;
    mapio::write_scalar_pfm(&ctx.path("boundary.pfm"), &gt.boundary)?;
    Ok(())
}

fn curvature(ctx: &Ctx, normals: &Path) -> Result<()> {
    let n = mapio::read_vec3_pfm(normals)?;
    let c = curvature_map(&n, ctx.cfg.differencing);
    mapio::write_curvature_pfm(&ctx.path("curvature.pfm"), &c)?;
    mapio::write_scalar_pfm(&ctx.path("boundary.pfm"), &boundary_map(&c))?;
    Ok(())
}

#[derive(Serialize)]
struct LossReport {
    gradients: Vec<panoplane::loss::gradcheck::GradCheckReport>,
    tolerance: f64,
    passed: bool,
    synthetic_loss: SyntheticLoss,
}

#[derive(Serialize)]
struct SyntheticLoss {
    total: f64,
    terms: [panoplane::loss::TermValues; 2],
}

fn default_scene() -> SceneSpec {
    SceneSpec::Room(RoomSpec {
        dims: [4.0, 3.0, 5.0],
        camera_offset: [0.3, 0.2, -0.4],
        boxes: vec![BoxSpec {
            center: [1.0, 1.2],
            size: [0.8, 0.9, 0.6],
        }],
    })
}

/// Loss of a deterministic perturbation of the default room.
fn synthetic_loss(ctx: &Ctx) -> Result<SyntheticLoss> {
    let scene = default_scene().build()?;
    let gt = render_gt(&scene, &ctx.grid)?;
    let targets = TargetSet::from_full_resolution(TargetMaps {
        depth: gt.depth.clone(),
        normals: gt.normals.clone(),
        boundary: gt.boundary.clone(),
    })?;
    let pred = |t: &TargetMaps| {
        let g = *t.depth.grid();
        let wobble = |i: usize| ((i as f64) * 0.618_034).fract() - 0.5;
        let mut depth = t.depth.clone();
        let mut normals = t.normals.clone();
        for i in 0..g.len() {
            depth.values_mut()[i] *= 1.0 + 0.05 * wobble(i);
            normals.values_mut()[i] += Vector3::new(0.05 * wobble(i), 0.05 * wobble(i + 7), 0.0);
        }
        ScalePrediction {
            depth,
            normals,
            boundary: Some(t.boundary.map(|b| 0.9 * b)),
        }
    };
    let preds = PredictionSet {
        scales: [pred(&targets.scales[0]), pred(&targets.scales[1])],
    };
    let r = loss_total(&preds, &targets, &ctx.cfg.loss)?;
    Ok(SyntheticLoss {
        total: r.total,
        terms: r.terms,
    })
}

fn loss_check(ctx: &Ctx, samples: Option<usize>, step: Option<f64>, margin: Option<f64>, tolerance: f64) -> Result<()> {
    let defaults = GradCheckOptions::default();
    let opts = GradCheckOptions {
        samples: samples.unwrap_or(defaults.samples),
        step: step.unwrap_or(defaults.step),
        margin: margin.unwrap_or(defaults.margin),
        seed: ctx.cfg.fit.ransac.seed,
        ..defaults
    };
    let gradients = run_gradient_suite(&opts)?;
    let passed = gradients.iter().all(|r| r.max_rel_err < tolerance);
    let report = LossReport {
        gradients,
        tolerance,
        passed,
        synthetic_loss: synthetic_loss(ctx)?,
    };
    ctx.write_json("loss_check.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !passed {
        bail!(CheckFailed(format!(
            "a loss gradient exceeds relative error {tolerance}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    t_depth: f64,
    pixels: usize,
    depth: panoplane::metrics::DepthMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    normals: Option<panoplane::metrics::NormalMetrics>,
}

fn eval(ctx: &Ctx, pred: &Path, gt: &Path, normals: Option<(PathBuf, PathBuf)>, t_depth: Option<f64>) -> Result<()> {
    let pred = mapio::read_scalar_pfm(pred)?;
    let gt = mapio::read_scalar_pfm(gt)?;
    let t = match t_depth {
        Some(t) => t,
        None => depth_threshold(&[&gt])?,
    };
    let mask = valid_mask(&gt, t)?;
    let scaled = median_scale(&pred, &gt, &mask)?;
    let depth = depth_metrics(&scaled, &gt, &mask)?;
    let normals = match normals {
        Some((p, g)) => {
            let p = mapio::read_vec3_pfm(&p)?;
            let g = mapio::read_vec3_pfm(&g)?;
            Some(normal_metrics(&p, &g, &mask)?)
        }
        None => None,
    };
    let report = EvalReport {
        t_depth: t,
        pixels: mask.iter().filter(|&&m| m).count(),
        depth,
        normals,
    };
    ctx.write_json("eval.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn segment(ctx: &Ctx, boundary: &Path) -> Result<()> {
    let b = mapio::read_scalar_pfm(boundary)?;
    let labels = segment_planes(&b, &ctx.cfg.segment)?;
    mapio::write_label_png(&ctx.path("labels.png"), &labels)?;
    mapio::write_label_palette_png(&ctx.path("labels_vis.png"), &labels)?;
    let sizes: Vec<usize> = labels.segments().iter().map(Vec::len).collect();
    ctx.write_json(
        "segments.json",
        &serde_json::json!({ "count": labels.count(), "sizes": sizes }),
    )?;
    Ok(())
}

fn run_popup(ctx: &Ctx, depth: &Path, normals: &Path, boundary: &Path, rgb: Option<&Path>) -> Result<()> {
    let depth = mapio::read_scalar_pfm(depth)?;
    let normals = mapio::read_vec3_pfm(normals)?;
    let boundary = mapio::read_scalar_pfm(boundary)?;
    let rgb = rgb.map(mapio::read_rgb_png).transpose()?;
    let out = popup(rgb.as_ref(), &depth, &normals, &boundary, &ctx.cfg)?;
    let mesh = TriMesh::from_scaled(&out.mesh);
    mapio::write_obj(&ctx.path("popup.obj"), &mesh)?;
    mapio::write_ply(&ctx.path("popup.ply"), &mesh)?;
    mapio::write_scalar_pfm(&ctx.path("depth_popup.pfm"), &out.fit.adjusted)?;
    mapio::write_label_png(&ctx.path("labels.png"), &out.labels)?;
    mapio::write_label_palette_png(&ctx.path("labels_vis.png"), &out.labels)?;
    ctx.write_json("planes.json", &out.fit.records())?;
    Ok(())
}

fn synth(ctx: &Ctx, scene: Option<&Path>, cube_size: Option<usize>) -> Result<()> {
    let spec = match scene {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| panoplane::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str::<SceneSpec>(&text).map_err(panoplane::Error::from)?
        }
        None => default_scene(),
    };
    let scene = spec.build()?;
    let gt = render_gt(&scene, &ctx.grid)?;
    mapio::write_scalar_pfm(&ctx.path("depth.pfm"), &gt.depth)?;
    mapio::write_vec3_pfm(&ctx.path("normals.pfm"), &gt.normals)?;
    mapio::write_scalar_pfm(&ctx.path("boundary.pfm"), &gt.boundary)?;
    mapio::write_rgb_png(&ctx.path("rgb.png"), &gt.rgb)?;
    mapio::write_label_png(&ctx.path("labels.png"), &gt.labels)?;
    if let Some(n) = cube_size {
        let (depth, rgb) = render_cubemap(&scene, n)?;
        for face in CubeFace::ALL {
            let img = mapio::PfmImage {
                width: n,
                height: n,
                channels: 1,
                data: depth.face(face).iter().map(|&v| v as f32).collect(),
            };
            let p = ctx.path(&format!("depth_{}.pfm", face.tag()));
            fs::write(&p, mapio::encode_pfm(&img)?).with_context(|| format!("writing {}", p.display()))?;
            mapio::write_rgb_image(&ctx.path(&format!("rgb_{}.png", face.tag())), n, n, rgb.face(face))?;
        }
    }
    Ok(())
}
