use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::evaluation::{pose_rmse, PoseMetrics};
use crate::fields::{NeuralField, SignedDistance};
use crate::intersection::IntersectStats;
use crate::geometry::{pixel_ray, Intrinsics, Pose, Ray, Rigid};
use crate::losses::{
    color_loss, plan_correspondences, record_eikonal, record_patches, record_reprojection, record_surface_points,
    total_objective, Correspondence, CorrespondencePlan, LossBreakdown, LossParts, PlanStats, Warmup,
};
use crate::real::Vec3;
use crate::rendering::{inv_s, plan_ray, record_render, RayPlan, INIT_VARIANCE};
use crate::rng::substream;
use crate::scene_io::{GrayImage, Image, Scene};

use super::adam::{cosine_lr, Adam};
use super::checkpoint::Checkpoint;
use super::config::{anneal_alpha, TrainConfig};

/// Consecutive non-finite steps tolerated before a run is abandoned.
pub const MAX_NONFINITE_STEPS: usize = 100;

pub const CSV_HEADER: &str =
    "iter,color,reproj,ncc,eikonal,total,rot_rmse_deg,trans_rmse,alpha,valid_corr,skipped_patches";

/// One metrics row: the losses evaluated at the state after `iter` steps
/// and, with ground truth, the aligned pose errors of that state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: usize,
    pub losses: LossBreakdown,
    pub rot_rmse_deg: Option<f64>,
    pub trans_rmse: Option<f64>,
    pub alpha: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        let l = &self.losses;
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{},{:.6},{},{}",
            self.iter,
            l.color,
            l.reproj,
            l.ncc,
            l.eikonal,
            l.total,
            opt(self.rot_rmse_deg),
            opt(self.trans_rmse),
            self.alpha,
            l.valid_correspondences,
            l.skipped_patches
        )
    }
}

/// Samples of one step, fixed in plain arithmetic before recording.
#[derive(Clone, Debug)]
pub struct Batch {
    pub pixels: Vec<(usize, [f64; 2])>,
    /// `None` where the ray misses the bound; such pixels render background.
    pub ray_plans: Vec<Option<RayPlan>>,
    pub targets: Vec<[f64; 3]>,
    pub correspondences: Vec<CorrespondencePlan>,
    pub eikonal_points: Vec<Vec3>,
    pub stats: PlanStats,
}

/// Multipliers of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub color: f64,
    pub reproj: f64,
    pub ncc: f64,
    pub eikonal: f64,
}

/// Objective value and its gradient; `field` follows [`NeuralField::flat_params`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub value: f64,
    pub field: Vec<f64>,
    pub variance: f64,
    pub poses: Vec<[f64; 6]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub planned_rays: usize,
    pub planned_correspondences: usize,
    pub substituted: usize,
    pub intersect: IntersectStats,
}

/// Joint optimization state of field, variance and pose increments.
pub struct Trainer {
    cfg: TrainConfig,
    field: NeuralField,
    variance: f64,
    poses: Vec<Pose>,
    gt: Option<Vec<Rigid>>,
    intrinsics: Vec<Intrinsics>,
    images: Vec<Image>,
    grays: Vec<GrayImage>,
    correspondences: Vec<Correspondence>,
    field_opt: Adam,
    variance_opt: Adam,
    pose_opt: Vec<Adam>,
    ray_rng: ChaCha8Rng,
    corr_rng: ChaCha8Rng,
    eik_rng: ChaCha8Rng,
    iter: usize,
    nonfinite_streak: usize,
    last_stats: StepStats,
}

impl Trainer {
    pub fn new(scene: &Scene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        let mut field = NeuralField::new(cfg.sdf(), cfg.radiance(), &mut substream(cfg.seed, "init"));
        fit_sphere_prior(
            &mut field,
            cfg.init_radius,
            cfg.bound_radius,
            cfg.prior_fit_iters,
            &mut substream(cfg.seed, "prior-fit"),
        );
        let n_params = field.sdf_param_count() + field.radiance_param_count();
        let mut trainer = Self {
            field,
            variance: INIT_VARIANCE,
            poses: scene.poses(),
            gt: scene.gt_poses(),
            intrinsics: scene.intrinsics(),
            images: scene.views.iter().map(|v| v.image.clone()).collect(),
            grays: scene.views.iter().map(|v| v.image.to_gray()).collect(),
            correspondences: scene.correspondences.entries.clone(),
            field_opt: Adam::new(n_params),
            variance_opt: Adam::new(1),
            pose_opt: (0..scene.views.len()).map(|_| Adam::new(6)).collect(),
            ray_rng: substream(cfg.seed, "ray-sampling"),
            corr_rng: substream(cfg.seed, "correspondence-sampling"),
            eik_rng: substream(cfg.seed, "eikonal-sampling"),
            iter: 0,
            nonfinite_streak: 0,
            last_stats: StepStats::default(),
            cfg,
        };
        trainer.field.set_alpha(trainer.alpha());
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn field(&self) -> &NeuralField {
        &self.field
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn cameras(&self) -> Vec<Rigid> {
        self.poses.iter().map(|p| p.world_to_camera()).collect()
    }

    pub fn last_stats(&self) -> StepStats {
        self.last_stats
    }

    pub fn alpha(&self) -> f64 {
        anneal_alpha(self.iter, self.cfg.alpha_schedule(), self.cfg.num_freqs)
    }

    pub fn pose_metrics(&self) -> Option<PoseMetrics> {
        let gt = self.gt.as_ref()?;
        pose_rmse(&self.cameras(), gt).ok()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iter,
            field: self.field.clone(),
            variance: self.variance,
            poses: self.poses.clone(),
        }
    }

    /// Resumes from a checkpoint (optimizer moments restart from zero).
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.poses.len() != self.poses.len() {
            return Err(Error::CountMismatch {
                estimated: ck.poses.len(),
                ground_truth: self.poses.len(),
            });
        }
        self.field = ck.field.clone();
        self.variance = ck.variance;
        self.poses = ck.poses.clone();
        self.iter = ck.iteration;
        self.field_opt = Adam::new(self.field.sdf_param_count() + self.field.radiance_param_count());
        Ok(())
    }

    /// Losses at the current state without updating anything.
    pub fn evaluate(&mut self) -> Result<LossBreakdown> {
        self.compute().map(|(b, _)| b)
    }

    /// One optimization step. `Ok(None)` when the step was skipped because
    /// the objective or its gradient was not finite.
    pub fn step(&mut self) -> Result<Option<LossBreakdown>> {
        let outcome = self.compute().and_then(|(b, g)| {
            let finite = g.field.iter().all(|v| v.is_finite())
                && g.variance.is_finite()
                && g.poses.iter().flatten().all(|v| v.is_finite());
            if finite {
                Ok((b, g))
            } else {
                Err(Error::NonFiniteLoss { term: "gradient" })
            }
        });
        let result = match outcome {
            Ok((breakdown, grads)) => {
                self.apply(&grads);
                self.nonfinite_streak = 0;
                Some(breakdown)
            }
            Err(Error::NonFiniteLoss { term }) => {
                log::warn!("iteration {}: non-finite {term}, step skipped", self.iter);
                self.nonfinite_streak += 1;
                if self.nonfinite_streak > MAX_NONFINITE_STEPS {
                    return Err(Error::DivergedRun(self.nonfinite_streak));
                }
                None
            }
            Err(e) => return Err(e),
        };
        self.iter += 1;
        Ok(result)
    }

    fn apply(&mut self, g: &Gradients) {
        let total = self.cfg.iterations;
        if self.cfg.optimize_field {
            let lr = cosine_lr(self.cfg.field_lr, self.cfg.field_lr_floor, self.iter, total);
            let opt = &mut self.field_opt;
            self.field.update_params(|sdf, rad| {
                let n = sdf.len();
                let mut flat: Vec<f64> = sdf.iter().chain(rad.iter()).copied().collect();
                opt.update(&mut flat, &g.field, lr);
                sdf.copy_from_slice(&flat[..n]);
                rad.copy_from_slice(&flat[n..]);
            });
            let mut v = [self.variance];
            self.variance_opt.update(&mut v, &[g.variance], self.cfg.variance_lr);
            self.variance = v[0];
        }
        if self.cfg.optimize_poses {
            for ((pose, opt), grad) in self.poses.iter_mut().zip(&mut self.pose_opt).zip(&g.poses) {
                opt.update(&mut pose.delta, grad, self.cfg.pose_lr);
            }
        }
    }

    fn sample_unit_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
        loop {
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if p.norm_squared() <= 1.0 {
                return p * radius;
            }
        }
    }

    /// Draws pixels, correspondences and Eikonal points for the next step
    /// and fixes every sample depth against the current state.
    pub fn plan_batch(&mut self) -> Batch {
        self.field.set_alpha(self.alpha());
        let warm = self.iter < self.cfg.warmup();
        let cfg = &self.cfg;
        let render = cfg.render();
        let icfg = cfg.intersect();
        let cams = self.cameras();
        let n_views = self.poses.len();

        let mut pixels = Vec::with_capacity(cfg.rays_per_batch);
        for _ in 0..cfg.rays_per_batch {
            let v = self.ray_rng.random_range(0..n_views);
            let k = &self.intrinsics[v];
            let px = [
                self.ray_rng.random_range(0..k.width) as f64,
                self.ray_rng.random_range(0..k.height) as f64,
            ];
            pixels.push((v, px));
        }
        let mut ray_plans: Vec<Option<RayPlan>> = Vec::with_capacity(pixels.len());
        let mut hit_rays = Vec::new();
        for &(v, px) in &pixels {
            let ray = pixel_ray(px, &cams[v], &self.intrinsics[v]);
            let plan = plan_ray(&self.field, &ray, &render, Some(&mut self.ray_rng));
            if let Some(p) = &plan {
                hit_rays.push((ray, p.t.clone()));
            }
            ray_plans.push(plan);
        }
        let targets: Vec<[f64; 3]> = pixels
            .iter()
            .map(|&(v, px)| self.images[v].pixel(px[0] as u32, px[1] as u32))
            .collect();

        let use_corr = (cfg.lambda_r > 0.0 || cfg.lambda_ncc > 0.0) && !self.correspondences.is_empty();
        let drawn: Vec<Correspondence> = if use_corr {
            (0..cfg.correspondences_per_batch)
                .map(|_| {
                    let c = self.correspondences[self.corr_rng.random_range(0..self.correspondences.len())];
                    if self.corr_rng.random_bool(0.5) {
                        c.swapped()
                    } else {
                        c
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut stats = PlanStats::default();
        let warmup = warm.then_some(Warmup {
            s: inv_s(self.variance),
            render: &render,
            threshold: cfg.warmup_threshold,
        });
        let correspondences =
            plan_correspondences(&self.field, &cams, &self.intrinsics, &drawn, &icfg, warmup, &mut stats);
        // Half the Eikonal points lie on the planned ray samples, which
        // concentrate near the surface; the rest fill the bound uniformly.
        let on_rays = if hit_rays.is_empty() { 0 } else { cfg.eikonal_samples / 2 };
        let mut eikonal_points: Vec<Vec3> = Vec::with_capacity(cfg.eikonal_samples);
        for _ in 0..on_rays {
            let (ray, t) = &hit_rays[self.eik_rng.random_range(0..hit_rays.len())];
            eikonal_points.push(ray.at(t[self.eik_rng.random_range(0..t.len())]));
        }
        while eikonal_points.len() < cfg.eikonal_samples {
            eikonal_points.push(Self::sample_unit_ball(&mut self.eik_rng, cfg.bound_radius));
        }
        Batch {
            pixels,
            ray_plans,
            targets,
            correspondences,
            eikonal_points,
            stats,
        }
    }

    /// Records a planned batch at the current state and differentiates the
    /// objective. `weights` replaces the configured term weights.
    pub fn record_batch(&self, batch: &Batch, weights: Option<TermWeights>) -> Result<(LossBreakdown, Gradients)> {
        let cfg = &self.cfg;
        let render = cfg.render();
        let lcfg = cfg.loss();
        let w = weights.unwrap_or(TermWeights {
            color: 1.0,
            reproj: cfg.lambda_r,
            ncc: cfg.lambda_ncc,
            eikonal: cfg.lambda_reg,
        });

        let tape = Tape::new();
        let deltas: Vec<[Var; 6]> = self.poses.iter().map(|p| p.delta.map(|d| tape.var(d))).collect();
        let cam_vars: Vec<Rigid<Var>> = self.poses.iter().zip(&deltas).map(|(p, d)| p.with_delta(d)).collect();
        let var_v = tape.var(self.variance);
        let s = inv_s(var_v);

        let mut rays: Vec<Ray<Var>> = Vec::new();
        let mut plans: Vec<RayPlan> = Vec::new();
        for (&(v, px), plan) in batch.pixels.iter().zip(&batch.ray_plans) {
            if let Some(plan) = plan {
                rays.push(pixel_ray(px, &cam_vars[v], &self.intrinsics[v]));
                plans.push(plan.clone());
            }
        }
        let rendered = record_render(&self.field, &tape, &rays, &plans, s, &render);
        let mut it = rendered.iter();
        let background = render.background.map(Var::constant);
        let rgb: Vec<[Var; 3]> = batch
            .ray_plans
            .iter()
            .map(|p| match p {
                Some(_) => it.next().expect("one render per plan").rgb,
                None => background,
            })
            .collect();
        let color = color_loss(&rgb, &batch.targets);

        let (mut reproj, mut ncc) = (Var::constant(0.0), Var::constant(0.0));
        let (mut valid, mut skipped) = (0, 0);
        let corr = &batch.correspondences;
        if !corr.is_empty() {
            let points = record_surface_points(&self.field, &tape, &cam_vars, &self.intrinsics, corr, s, &render);
            let (r, n) = record_reprojection(&cam_vars, &self.intrinsics, corr, &points, &lcfg);
            reproj = r;
            valid = n;
            if w.ncc > 0.0 {
                let (l, _, sk) =
                    record_patches(&self.field, &tape, &cam_vars, &self.intrinsics, &self.grays, corr, &points, &lcfg);
                ncc = l;
                skipped = sk;
            }
        }
        let eikonal = if batch.eikonal_points.is_empty() {
            Var::constant(0.0)
        } else {
            record_eikonal(&self.field, &tape, &batch.eikonal_points)
        };
        let parts = LossParts {
            color,
            reproj,
            ncc,
            eikonal,
            valid_correspondences: valid,
            skipped_patches: skipped,
        };
        let (total, breakdown) = total_objective(&parts, &lcfg)?;
        let objective = match weights {
            None => total,
            Some(_) => color * w.color + reproj * w.reproj + ncc * w.ncc + eikonal * w.eikonal,
        };
        let mut field_grad = vec![0.0; self.field.sdf_param_count() + self.field.radiance_param_count()];
        let adj = tape.gradient(objective, &mut field_grad);
        let grads = Gradients {
            value: objective.value(),
            field: field_grad,
            variance: adj.wrt(var_v),
            poses: deltas.iter().map(|d| d.map(|v| adj.wrt(v))).collect(),
        };
        Ok((breakdown, grads))
    }

    fn compute(&mut self) -> Result<(LossBreakdown, Gradients)> {
        let batch = self.plan_batch();
        let out = self.record_batch(&batch, None);
        self.last_stats = StepStats {
            planned_rays: batch.ray_plans.iter().flatten().count(),
            planned_correspondences: batch.correspondences.len(),
            substituted: batch.stats.substituted,
            intersect: batch.stats.intersect,
        };
        out
    }

    fn log_row(&self, losses: LossBreakdown) -> LogRow {
        let m = self.pose_metrics();
        LogRow {
            iter: self.iter,
            losses,
            rot_rmse_deg: m.as_ref().map(|m| m.rot_rmse_deg),
            trans_rmse: m.as_ref().map(|m| m.trans_rmse),
            alpha: self.field.alpha(),
        }
    }
}

/// Points per prior-fit step.
const PRIOR_FIT_BATCH: usize = 256;

/// Regresses the distance output and its gradient onto `‖x‖ − radius`
/// inside the bound.
/// Narrow networks leave a visibly lumpy zero set after geometric
/// initialization; a short fit restores the sphere before training starts.
pub fn fit_sphere_prior(field: &mut NeuralField, radius: f64, bound: f64, iters: usize, rng: &mut ChaCha8Rng) {
    let n = field.sdf_param_count() + field.radiance_param_count();
    let mut adam = Adam::new(n);
    for _ in 0..iters {
        let pts: Vec<Vec3> = (0..PRIOR_FIT_BATCH).map(|_| Trainer::sample_unit_ball(rng, bound)).collect();
        let mut grad = vec![0.0; n];
        {
            let tape = Tape::new();
            let taped: Vec<Vec3<Var>> = pts.iter().map(|p| p.map(Var::constant)).collect();
            let f = field.record(&tape, &taped, true);
            let mut loss = Var::constant(0.0);
            for ((v, g), p) in f.iter().zip(&pts) {
                let r = *v - (p.norm() - radius);
                let dg = *g - p.normalize().map(Var::constant);
                loss = loss + r * r + dg.norm_squared();
            }
            let loss = loss / PRIOR_FIT_BATCH as f64;
            tape.gradient(loss, &mut grad);
        }
        field.update_params(|sdf, rad| {
            let k = sdf.len();
            let mut flat: Vec<f64> = sdf.iter().chain(rad.iter()).copied().collect();
            adam.update(&mut flat, &grad, PRIOR_FIT_LR);
            sdf.copy_from_slice(&flat[..k]);
            rad.copy_from_slice(&flat[k..]);
        });
    }
}

const PRIOR_FIT_LR: f64 = 1e-3;

/// Files of a run directory.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, iter: usize) -> PathBuf {
        self.checkpoint_dir().join(format!("ckpt_{iter:08}.bin"))
    }

    /// Checkpoint with the highest iteration number, if any.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let entries = fs::read_dir(self.checkpoint_dir()).ok()?;
        entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("ckpt_") && n.ends_with(".bin"))
            })
            .max()
    }
}

pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub initial_metrics: Option<PoseMetrics>,
    pub final_metrics: Option<PoseMetrics>,
    pub checkpoint: Checkpoint,
}

/// Runs `cfg.iterations` steps. A row is logged every `log_every` steps
/// (including step 0 and, when divisible, the final state), so the CSV has
/// `iterations / log_every + 1` rows. With `out`, the config snapshot is
/// written first, then the CSV and periodic plus final checkpoints.
pub fn run_training(
    scene: &Scene,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(scene, cfg.clone())?;
    let paths = out.map(RunPaths::new);
    if let Some(p) = &paths {
        fs::create_dir_all(p.checkpoint_dir()).map_err(|e| Error::io(p.checkpoint_dir(), e))?;
        fs::write(p.config(), cfg.to_kv()).map_err(|e| Error::io(p.config(), e))?;
    }
    let initial_metrics = trainer.pose_metrics();
    let mut rows = Vec::new();
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut record = |row: LogRow, csv: &mut String| {
        let _ = writeln!(csv, "{}", row.to_csv());
        on_row(&row);
        rows.push(row);
    };
    for k in 0..cfg.iterations {
        let should_log = k % cfg.log_every == 0;
        let before = should_log.then(|| trainer.log_row(LossBreakdown::default()));
        let result = trainer.step()?;
        if let Some(mut row) = before {
            row.losses = match result {
                Some(b) => b,
                None => LossBreakdown {
                    color: f64::NAN,
                    reproj: f64::NAN,
                    ncc: f64::NAN,
                    eikonal: f64::NAN,
                    total: f64::NAN,
                    ..LossBreakdown::default()
                },
            };
            record(row, &mut csv);
        }
        if let Some(p) = &paths {
            let done = k + 1;
            if done % cfg.checkpoint_every == 0 && done < cfg.iterations {
                trainer.checkpoint().save(&p.checkpoint(done))?;
            }
        }
    }
    if cfg.iterations % cfg.log_every == 0 {
        let losses = trainer.evaluate()?;
        let row = trainer.log_row(losses);
        record(row, &mut csv);
    }
    let checkpoint = trainer.checkpoint();
    if let Some(p) = &paths {
        checkpoint.save(&p.checkpoint(trainer.iteration()))?;
        fs::write(p.metrics_csv(), &csv).map_err(|e| Error::io(p.metrics_csv(), e))?;
    }
    Ok(TrainOutcome {
        rows,
        initial_metrics,
        final_metrics: trainer.pose_metrics(),
        checkpoint,
    })
}
