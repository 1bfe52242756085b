//! `sc-surf` subcommands. Each `cmd_*` function is what the binary runs;
//! they are public so tests can drive the pipeline without a subprocess.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scsurf_core::evaluation::{
    chamfer_with_icp, marching_cubes, pose_rmse, sample_analytic_surface, Bounds, ChamferMode, Mesh, PoseMetrics,
    MIN_RESOLUTION,
};
use scsurf_core::fields::Texture;
use scsurf_core::geometry::Sim3;
use scsurf_core::rng::substream;
use scsurf_core::scene_io::{generate_synthetic, preset_shape, Scene, SynthConfig};
use scsurf_core::training::{run_training, Checkpoint, RunPaths, TrainConfig, TrainOutcome};
use scsurf_core::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MISSING_INPUT: i32 = 4;
pub const EXIT_EMPTY: i32 = 5;
pub const EXIT_OTHER: i32 = 1;

pub const LOG_ENV: &str = "SC_SURF_LOG";
pub const METRICS_JSON: &str = "metrics.json";
pub const MESH_FILE: &str = "mesh.ply";
pub const RUN_INFO: &str = "run_info.json";

#[derive(Parser, Debug)]
#[command(name = "sc-surf", version, about = "Sparse-view neural surface reconstruction with pose refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic scene with noisy initial poses and correspondences.
    Synth(SynthArgs),
    /// Jointly optimize the field and the camera poses.
    Train(TrainArgs),
    /// Marching cubes on the latest checkpoint of a run.
    ExtractMesh(MeshArgs),
    /// Pose RMSE and Chamfer distance against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Sphere,
    Box,
    Torus,
    Composite,
}

impl ShapeArg {
    fn name(self) -> &'static str {
        match self {
            ShapeArg::Sphere => "sphere",
            ShapeArg::Box => "box",
            ShapeArg::Torus => "torus",
            ShapeArg::Composite => "composite",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    /// Standard deviation of the se(3) pose perturbation.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "96x96", value_parser = parse_resolution)]
    pub res: (u32, u32),
    #[arg(long, default_value_t = 300)]
    pub matches: usize,
    /// Matches seen more obliquely than this (degrees) in either view are dropped.
    #[arg(long, default_value_t = 60.0)]
    pub max_view_angle: f64,
    /// Azimuth spread of the camera ring in degrees.
    #[arg(long, default_value_t = 60.0)]
    pub arc: f64,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Flat `key = value` file overriding the default training constants.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug, Clone)]
pub struct MeshArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Marching-cubes resolution of the evaluated surface.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Surface samples per side of the Chamfer distance.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = ChamferArg::Sum)]
    pub chamfer: ChamferArg,
    /// Metrics file; defaults to `<run>/metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChamferArg {
    Sum,
    MeanOfMeans,
}

fn parse_resolution(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

/// A failed command: message plus the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    fn missing(e: Error) -> Self {
        Self::new(EXIT_MISSING_INPUT, e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::DivergedRun(_) => EXIT_DIVERGED,
            Error::EmptySurface => EXIT_EMPTY,
            Error::Io { .. } | Error::MissingImage(_) | Error::Image { .. } => EXIT_MISSING_INPUT,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

pub fn cmd_synth(args: &SynthArgs) -> CmdResult<Scene> {
    let shape = preset_shape(args.shape.name()).expect("every ShapeArg has a preset");
    let cfg = SynthConfig {
        n_views: args.views,
        noise_sigma: args.noise,
        seed: args.seed,
        width: args.res.0,
        height: args.res.1,
        n_correspondences: args.matches,
        max_view_angle_deg: args.max_view_angle,
        arc_deg: args.arc,
        ..SynthConfig::default()
    };
    let scene = generate_synthetic(shape, Texture::waves(), &cfg).map_err(|e| Failure::usage(e.to_string()))?;
    scene.save(&args.out)?;
    log::info!(
        "wrote {} views and {} correspondences to {}",
        scene.views.len(),
        scene.correspondences.len(),
        args.out.display()
    );
    Ok(scene)
}

/// Training constants for a run: defaults, then the config file, then flags.
pub fn resolve_config(args: &TrainArgs) -> CmdResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::missing(Error::Io {
                path: path.clone(),
                source: e,
            }))?;
            TrainConfig::from_kv(&text, path).map_err(|e| Failure::usage(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.threads = args.threads;
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunInfo {
    started_unix_s: f64,
    finished_unix_s: f64,
    iterations: usize,
    scene: PathBuf,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult<TrainOutcome> {
    let cfg = resolve_config(args)?;
    let scene = Scene::load(&args.scene).map_err(Failure::missing)?;
    let started = unix_now();
    let outcome = run_training(&scene, &cfg, Some(&args.out), |row| {
        log::info!(
            "iter {:>6} total {:.5} color {:.5} reproj {:.4} ncc {:.4} eik {:.4} rot {} trans {}",
            row.iter,
            row.losses.total,
            row.losses.color,
            row.losses.reproj,
            row.losses.ncc,
            row.losses.eikonal,
            row.rot_rmse_deg.map_or("-".into(), |v| format!("{v:.4}")),
            row.trans_rmse.map_or("-".into(), |v| format!("{v:.5}")),
        );
    })?;
    let info = RunInfo {
        started_unix_s: started,
        finished_unix_s: unix_now(),
        iterations: cfg.iterations,
        scene: args.scene.clone(),
    };
    write_json(&args.out.join(RUN_INFO), &info)?;
    Ok(outcome)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).expect("metrics serialize");
    fs::write(path, text + "\n").map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Latest checkpoint of a run and the training constants it was made with.
pub fn load_run(run: &Path) -> CmdResult<(Checkpoint, TrainConfig)> {
    let paths = RunPaths::new(run);
    let ckpt = paths.latest_checkpoint().ok_or_else(|| {
        Failure::new(
            EXIT_MISSING_INPUT,
            format!("no checkpoint found in {}", paths.checkpoint_dir().display()),
        )
    })?;
    let checkpoint = Checkpoint::load(&ckpt).map_err(Failure::missing)?;
    let cfg_path = paths.config();
    let cfg = match fs::read_to_string(&cfg_path) {
        Ok(text) => TrainConfig::from_kv(&text, &cfg_path).map_err(Failure::missing)?,
        Err(_) => TrainConfig::default(),
    };
    Ok((checkpoint, cfg))
}

fn extract(checkpoint: &Checkpoint, cfg: &TrainConfig, res: usize) -> CmdResult<Mesh> {
    if res < MIN_RESOLUTION {
        return Err(Failure::usage(format!("--res must be at least {MIN_RESOLUTION}, got {res}")));
    }
    Ok(marching_cubes(&checkpoint.field, res, Bounds::cube(cfg.bound_radius))?)
}

pub fn cmd_extract_mesh(args: &MeshArgs) -> CmdResult<Mesh> {
    if args.res < MIN_RESOLUTION {
        return Err(Failure::usage(format!(
            "--res must be at least {MIN_RESOLUTION}, got {}",
            args.res
        )));
    }
    let (checkpoint, cfg) = load_run(&args.run)?;
    let mesh = extract(&checkpoint, &cfg, args.res)?;
    mesh.save_ply(&args.out)?;
    log::info!(
        "{} vertices, {} triangles -> {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        args.out.display()
    );
    Ok(mesh)
}

/// Contents of `metrics.json`. Lengths are in normalized scene units and
/// angles in degrees; fields without ground truth are `null`.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub units: &'static str,
    pub iteration: usize,
    pub rot_rmse_deg: Option<f64>,
    pub trans_rmse: Option<f64>,
    /// `[rot_err_deg, trans_err]` per view.
    pub per_view: Option<Vec<[f64; 2]>>,
    /// With two views camera 0 is pinned to ground truth and only view 1
    /// enters the RMSE.
    pub two_view_gauge: bool,
    pub chamfer: Option<f64>,
    pub chamfer_icp: Option<f64>,
    pub chamfer_mode: &'static str,
    pub chamfer_samples: usize,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let f = |v: Option<f64>, p: usize| v.map_or("n/a".to_string(), |x| format!("{x:.p$}"));
        format!(
            "iter {}: rot RMSE {} deg, trans RMSE {}, chamfer {} (icp {})",
            self.iteration,
            f(self.rot_rmse_deg, 4),
            f(self.trans_rmse, 5),
            f(self.chamfer, 5),
            f(self.chamfer_icp, 5)
        )
    }
}

/// Ground-truth surface samples in normalized scene units.
fn ground_truth_points(scene: &Scene, scene_dir: &Path, n: usize) -> CmdResult<Option<Vec<scsurf_core::Vec3>>> {
    let mut rng = substream(0, "eval-ground-truth");
    if let Some(shape) = &scene.gt_shape {
        return Ok(Some(sample_analytic_surface(shape, n, &mut rng)?));
    }
    if let Some(rel) = &scene.gt_mesh {
        let mesh = Mesh::load_ply(&scene_dir.join(rel)).map_err(Failure::missing)?;
        let pts = mesh.sample_surface(n, &mut rng);
        return Ok(Some(pts.into_iter().map(|p| scene.normalization.normalize(p)).collect()));
    }
    Ok(None)
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult<EvalReport> {
    let scene = Scene::load(&args.scene).map_err(Failure::missing)?;
    let gt_poses = scene.gt_poses();
    let gt_points = ground_truth_points(&scene, &args.scene, args.samples)?;
    if gt_poses.is_none() && gt_points.is_none() {
        return Err(Failure::new(
            EXIT_MISSING_INPUT,
            format!(
                "{} carries neither ground-truth poses nor a ground-truth shape or mesh",
                args.scene.display()
            ),
        ));
    }
    let (checkpoint, cfg) = load_run(&args.run)?;
    let cams: Vec<_> = checkpoint.poses.iter().map(|p| p.world_to_camera()).collect();
    let metrics: Option<PoseMetrics> = gt_poses.as_ref().map(|gt| pose_rmse(&cams, gt)).transpose()?;
    let mode = match args.chamfer {
        ChamferArg::Sum => ChamferMode::Sum,
        ChamferArg::MeanOfMeans => ChamferMode::MeanOfMeans,
    };
    let (chamfer, chamfer_icp) = match &gt_points {
        Some(target) => {
            let mesh = extract(&checkpoint, &cfg, args.res)?;
            mesh.save_ply(&args.run.join(MESH_FILE))?;
            let source = mesh.sample_surface(args.samples, &mut substream(0, "eval-estimate"));
            let init = metrics.as_ref().map_or(Sim3::identity(), |m| m.alignment);
            let (raw, refined, _) = chamfer_with_icp(&source, target, &init, mode)?;
            (Some(raw), Some(refined))
        }
        None => (None, None),
    };
    let report = EvalReport {
        units: "normalized scene units",
        iteration: checkpoint.iteration,
        rot_rmse_deg: metrics.as_ref().map(|m| m.rot_rmse_deg),
        trans_rmse: metrics.as_ref().map(|m| m.trans_rmse),
        per_view: metrics.as_ref().map(|m| m.per_view.iter().map(|&(r, t)| [r, t]).collect()),
        two_view_gauge: scene.views.len() == 2,
        chamfer,
        chamfer_icp,
        chamfer_mode: match mode {
            ChamferMode::Sum => "sum",
            ChamferMode::MeanOfMeans => "mean_of_means",
        },
        chamfer_samples: args.samples,
    };
    let out = args.out.clone().unwrap_or_else(|| args.run.join(METRICS_JSON));
    write_json(&out, &report)?;
    Ok(report)
}

/// Runs one parsed command line; `Err` carries the exit code.
pub fn run(cli: &Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|o| {
            if let (Some(i), Some(f)) = (&o.initial_metrics, &o.final_metrics) {
                println!(
                    "rot RMSE {:.4} -> {:.4} deg, trans RMSE {:.5} -> {:.5}",
                    i.rot_rmse_deg, f.rot_rmse_deg, i.trans_rmse, f.trans_rmse
                );
            }
        }),
        Command::ExtractMesh(a) => cmd_extract_mesh(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|r| println!("{}", r.summary())),
    }
}
