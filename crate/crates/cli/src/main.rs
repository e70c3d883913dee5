mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panoplane::curvature::Differencing;

/// Plane-aware 360° geometry tools.
#[derive(Debug, Parser)]
#[command(name = "panoplane", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Explicit flags override the config file,
/// which overrides the built-in defaults.
#[derive(Debug, Args)]
struct Common {
    /// Output grid width; must be twice the height [default: 512]
    #[arg(long, global = true)]
    width: Option<usize>,
    /// Output grid height [default: 256]
    #[arg(long, global = true)]
    height: Option<usize>,
    /// Icosphere subdivision level [default: 7]
    #[arg(long, global = true)]
    ico_level: Option<u32>,
    /// RANSAC / sampling seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all outputs
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DiffArg {
    ArcLength,
    RawPixel,
}

impl From<DiffArg> for Differencing {
    fn from(d: DiffArg) -> Self {
        match d {
            DiffArg::ArcLength => Differencing::ArcLength,
            DiffArg::RawPixel => Differencing::RawPixel,
        }
    }
}

#[derive(Debug, Args)]
struct CubeInput {
    /// Directory holding depth_{px,nx,py,ny,pz,nz}.pfm and optionally rgb_<face>.png
    #[arg(long)]
    cube_dir: PathBuf,
    /// Cube depth stores planar z instead of ray distance [default: false]
    #[arg(long)]
    planar_depth: bool,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// Otsu histogram bins [default: 256]
    #[arg(long)]
    bins: Option<usize>,
    /// Smallest segment kept, in pixels [default: 100]
    #[arg(long)]
    min_size: Option<usize>,
    /// Do not connect pixels across the longitude seam
    #[arg(long)]
    no_wrap: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// RANSAC iterations per segment [default: 100]
    #[arg(long)]
    iterations: Option<usize>,
    /// RANSAC inlier tolerance in meters [default: 0.05]
    #[arg(long)]
    inlier_tol: Option<f64>,
    /// Minimum inlier fraction for a segment to be projected [default: 0.5]
    #[arg(long)]
    min_inlier_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// Depth weights per scale, half,full [default: 0.3,0.6]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    alpha: Option<Vec<f64>>,
    /// Normal weights per scale [default: 0.1,0.4]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    beta: Option<Vec<f64>>,
    /// Boundary weights per scale [default: 0,0.3]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    gamma: Option<Vec<f64>>,
    /// Plane-distance weights per scale [default: 0.3,0.6]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    zeta: Option<Vec<f64>>,
    /// Boundary loss factor [default: 0.1]
    #[arg(long)]
    eta: Option<f64>,
    /// BerHu knee as a fraction of the largest error [default: 0.2]
    #[arg(long)]
    berhu_fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample a cube map to an equirectangular depth.pfm and rgb.png
    Resample {
        #[command(flatten)]
        input: CubeInput,
    },
    /// Derive depth, normal, curvature and boundary ground truth from a cube map
    DeriveGt {
        #[command(flatten)]
        input: CubeInput,
        /// Finite-difference scaling [default: arc-length]
        #[arg(long, value_enum)]
        differencing: Option<DiffArg>,
    },
    /// Principal curvature and boundary maps of a normal map
    Curvature {
        /// Three-channel PFM normal map
        #[arg(long)]
        normals: PathBuf,
        /// Finite-difference scaling [default: arc-length]
        #[arg(long, value_enum)]
        differencing: Option<DiffArg>,
    },
    /// Check analytic loss gradients against finite differences and evaluate
    /// the loss on a perturbed synthetic room
    LossCheck {
        /// Gradient entries compared per term [default: 1000]
        #[arg(long)]
        samples: Option<usize>,
        /// Finite-difference step [default: 1e-5]
        #[arg(long)]
        step: Option<f64>,
        /// Exclusion margin around non-smooth points [default: 1e-3]
        #[arg(long)]
        margin: Option<f64>,
        /// Largest accepted relative error [default: 1e-4]
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        loss: LossArgs,
    },
    /// Depth and normal metrics of a prediction against ground truth
    Eval {
        #[arg(long)]
        pred_depth: PathBuf,
        #[arg(long)]
        gt_depth: PathBuf,
        #[arg(long, requires = "gt_normals")]
        pred_normals: Option<PathBuf>,
        #[arg(long, requires = "pred_normals")]
        gt_normals: Option<PathBuf>,
        /// Depth cut-off; defaults to mean + 4.375 std of the ground truth
        #[arg(long)]
        t_depth: Option<f64>,
    },
    /// Segment a boundary map into planar regions
    Segment {
        #[arg(long)]
        boundary: PathBuf,
        #[command(flatten)]
        segment: SegmentArgs,
    },
    /// Build a piecewise-planar pop-up mesh from depth, normal and boundary maps
    Popup {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        normals: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        /// Optional colour image for vertex colours
        #[arg(long)]
        rgb: Option<PathBuf>,
        #[command(flatten)]
        segment: SegmentArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Render exact ground truth of an analytic scene
    Synth {
        /// Scene JSON ({"room": {...}} or {"planes": [...]}); a furnished room if omitted
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Also render a cube map with this face size
        #[arg(long)]
        cube_size: Option<usize>,
    },
}

fn report(err: &anyhow::Error) {
    let core = err.downcast_ref::<panoplane::Error>();
    let kind = core
        .map(panoplane::Error::kind)
        .or_else(|| err.downcast_ref::<commands::CheckFailed>().map(|_| "check_failed"))
        .unwrap_or("cli");
    // Core errors already include their source in the message.
    let msg = match core {
        Some(e) => e.to_string(),
        None => format!("{err:#}"),
    };
    eprintln!("{}", serde_json::json!({ "error": msg, "kind": kind }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": msg.trim(), "kind": "usage" }));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
