//! Loss terms of the joint objective: photometric color, view-consistent
//! reprojection of shared surface points, NCC of plane-warped patches, and
//! the Eikonal regularizer.
//!
//! Each term is split into a plan (plain arithmetic: brackets, Newton start
//! depths, warm-up substitutions) and a taped record that is differentiable
//! w.r.t. field parameters and pose deltas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fields::SignedDistance;
use crate::geometry::{apply_homography, pixel_ray, plane_transfer, project_with, Intrinsics, Pose, Ray, Rigid};
use crate::intersection::{plan_intersection, record_intersections, IntersectConfig, IntersectStats, SurfacePlan};
use crate::real::{Real, Vec3};
use crate::rendering::{plan_ray, record_depth, render_depth, RayPlan, RenderConfig, RenderedDepth};
use crate::scene_io::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub view_i: usize,
    pub view_j: usize,
    pub pixel_i: [f64; 2],
    pub pixel_j: [f64; 2],
    pub confidence: f64,
}

impl Correspondence {
    /// Same match with the reference and target roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            view_i: self.view_j,
            view_j: self.view_i,
            pixel_i: self.pixel_j,
            pixel_j: self.pixel_i,
            confidence: self.confidence,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub entries: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(entries: Vec<Correspondence>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `N_k` per unordered view pair `(min, max)`.
    pub fn pair_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for c in &self.entries {
            let key = (c.view_i.min(c.view_j), c.view_i.max(c.view_j));
            *counts.entry(key).or_insert(0) += 1;
        }
        counts
    }

    pub fn validate(&self, intrinsics: &[Intrinsics]) -> Result<()> {
        for (n, c) in self.entries.iter().enumerate() {
            if c.view_i == c.view_j {
                return Err(Error::InvariantViolation(format!("correspondence {n} matches view {} to itself", c.view_i)));
            }
            for (view, px) in [(c.view_i, c.pixel_i), (c.view_j, c.pixel_j)] {
                let k = intrinsics.get(view).ok_or_else(|| {
                    Error::InvariantViolation(format!("correspondence {n} references missing view {view}"))
                })?;
                if !k.contains(px[0], px[1]) {
                    return Err(Error::InvariantViolation(format!(
                        "correspondence {n} pixel ({}, {}) outside view {view}",
                        px[0], px[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_r: f64,
    pub lambda_ncc: f64,
    pub lambda_reg: f64,
    /// Per-view L1 reprojection residuals are clamped at this many pixels.
    pub rho_max: f64,
    pub patch_half_extent: u32,
    /// Patches whose intensity standard deviation falls below this are skipped.
    pub tau_var: f64,
    /// Divide the patch covariance by `Var·Var` instead of `σ·σ`.
    pub ncc_variance_product: bool,
    pub warmup_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_ncc: 0.5,
            lambda_reg: 0.1,
            rho_max: 50.0,
            patch_half_extent: 5,
            tau_var: 0.01,
            ncc_variance_product: false,
            warmup_threshold: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub color: f64,
    pub reproj: f64,
    pub ncc: f64,
    pub eikonal: f64,
    pub total: f64,
    pub valid_correspondences: usize,
    pub skipped_patches: usize,
}

/// Mean L1 difference over rays and channels.
pub fn color_loss<T: Real>(rendered: &[[T; 3]], target: &[[f64; 3]]) -> T {
    assert_eq!(rendered.len(), target.len());
    if rendered.is_empty() {
        return T::zero();
    }
    let mut sum = T::zero();
    for (r, g) in rendered.iter().zip(target) {
        for c in 0..3 {
            sum = sum + (r[c] - g[c]).abs();
        }
    }
    sum * (1.0 / (3 * rendered.len()) as f64)
}

/// Mean of `(‖∇f‖ − 1)²`.
pub fn eikonal_loss<T: Real>(grads: &[Vec3<T>]) -> T {
    if grads.is_empty() {
        return T::zero();
    }
    let mut sum = T::zero();
    for g in grads {
        let r = g.norm() - 1.0;
        sum = sum + r * r;
    }
    sum * (1.0 / grads.len() as f64)
}

/// Records the Eikonal term at fixed sample points.
pub fn record_eikonal<'t, F: SignedDistance + ?Sized>(field: &F, tape: &'t Tape, points: &[Vec3]) -> Var<'t> {
    let pts: Vec<Vec3<Var>> = points.iter().map(|p| Vec3::from_f64(*p)).collect();
    let grads: Vec<Vec3<Var>> = field.record(tape, &pts, true).into_iter().map(|(_, g)| g).collect();
    eikonal_loss(&grads)
}

/// Normalized cross-correlation of two equally sized patches. `None` when
/// either standard deviation is below `tau_var`. With `variance_product`
/// the covariance is divided by the product of variances instead.
pub fn ncc<T: Real>(reference: &[f64], target: &[T], tau_var: f64, variance_product: bool) -> Option<T> {
    let n = reference.len() as f64;
    let mean_a = reference.iter().sum::<f64>() / n;
    let mut mean_b = T::zero();
    for b in target {
        mean_b = mean_b + *b;
    }
    let mean_b = mean_b * (1.0 / n);
    let var_a = reference.iter().map(|a| (a - mean_a).powi(2)).sum::<f64>() / n;
    let mut var_b = T::zero();
    let mut cov = T::zero();
    for (a, b) in reference.iter().zip(target) {
        let db = *b - mean_b;
        var_b = var_b + db * db;
        cov = cov + db * (a - mean_a);
    }
    let var_b = var_b * (1.0 / n);
    let cov = cov * (1.0 / n);
    if var_a.sqrt() < tau_var || var_b.value().sqrt() < tau_var {
        return None;
    }
    if variance_product {
        Some(cov / (var_b * var_a))
    } else {
        Some(cov / (var_b.sqrt() * var_a.sqrt()))
    }
}

/// Where the shared surface point of a correspondence comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceSource {
    Intersection(SurfacePlan),
    /// Warm-up substitution by the volume-rendered depth point.
    RenderedDepth { plan: RayPlan, t_d: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondencePlan {
    pub corr: Correspondence,
    pub source: SurfaceSource,
    /// Newton-corrected intersection before any warm-up substitution.
    pub p_star: Vec3,
}

#[derive(Clone, Copy, Debug)]
pub struct Warmup<'a> {
    pub s: f64,
    pub render: &'a RenderConfig,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlanStats {
    pub intersect: IntersectStats,
    pub substituted: usize,
}

/// Intersects the reference ray of every correspondence with the current
/// field. Correspondences whose ray does not hit the surface are dropped.
pub fn plan_correspondences<F: SignedDistance + ?Sized>(
    field: &F,
    cams: &[Rigid],
    intrinsics: &[Intrinsics],
    corrs: &[Correspondence],
    icfg: &IntersectConfig,
    warmup: Option<Warmup<'_>>,
    stats: &mut PlanStats,
) -> Vec<CorrespondencePlan> {
    let mut plans = Vec::with_capacity(corrs.len());
    for c in corrs {
        let ray = pixel_ray(c.pixel_i, &cams[c.view_i], &intrinsics[c.view_i]);
        let Some(sp) = plan_intersection(field, &ray, icfg, &mut stats.intersect) else {
            continue;
        };
        let p_star = sp.point.position;
        let mut source = SurfaceSource::Intersection(sp);
        if let Some(w) = warmup {
            let no_rng: Option<&mut rand_chacha::ChaCha8Rng> = None;
            let depth_cfg = RenderConfig {
                perturb: false,
                ..*w.render
            };
            if let Some(RenderedDepth::Surface(t_d)) = render_depth(field, &ray, w.s, &depth_cfg, no_rng) {
                if (p_star - ray.at(t_d)).norm() > w.threshold {
                    let plan = plan_ray(field, &ray, &depth_cfg, None::<&mut rand_chacha::ChaCha8Rng>)
                        .expect("ray already hit the bound");
                    source = SurfaceSource::RenderedDepth { plan, t_d };
                    stats.substituted += 1;
                }
            }
        }
        plans.push(CorrespondencePlan {
            corr: *c,
            source,
            p_star,
        });
    }
    plans
}

fn ray_at_var<'t>(ray: &Ray<Var<'t>>, t: Var<'t>) -> Vec3<Var<'t>> {
    ray.origin + ray.direction.scale(t)
}

/// Records the shared surface point of every planned correspondence.
pub fn record_surface_points<'t, F: SignedDistance + ?Sized>(
    field: &F,
    tape: &'t Tape,
    cams: &[Rigid<Var<'t>>],
    intrinsics: &[Intrinsics],
    plans: &[CorrespondencePlan],
    s: Var<'t>,
    render: &RenderConfig,
) -> Vec<Vec3<Var<'t>>> {
    let rays: Vec<Ray<Var>> = plans
        .iter()
        .map(|p| pixel_ray(p.corr.pixel_i, &cams[p.corr.view_i], &intrinsics[p.corr.view_i]))
        .collect();
    let mut newton_rays = Vec::new();
    let mut newton_plans = Vec::new();
    let mut depth_rays = Vec::new();
    let mut depth_plans = Vec::new();
    for (ray, p) in rays.iter().zip(plans) {
        match &p.source {
            SurfaceSource::Intersection(sp) => {
                newton_rays.push(*ray);
                newton_plans.push(*sp);
            }
            SurfaceSource::RenderedDepth { plan, .. } => {
                depth_rays.push(*ray);
                depth_plans.push(plan.clone());
            }
        }
    }
    let mut newton = record_intersections(field, tape, &newton_rays, &newton_plans).into_iter();
    let mut depths = record_depth(field, tape, &depth_rays, &depth_plans, s, render).into_iter();
    rays.iter()
        .zip(plans)
        .map(|(ray, p)| match &p.source {
            SurfaceSource::Intersection(_) => newton.next().expect("one point per plan"),
            SurfaceSource::RenderedDepth { t_d, .. } => {
                let t = depths.next().flatten().unwrap_or(Var::constant(*t_d));
                ray_at_var(ray, t)
            }
        })
        .collect()
}

/// Mean over valid correspondences of the clamped L1 pixel residuals in
/// both views. Returns the term and the number of valid correspondences.
pub fn record_reprojection<'t>(
    cams: &[Rigid<Var<'t>>],
    intrinsics: &[Intrinsics],
    plans: &[CorrespondencePlan],
    points: &[Vec3<Var<'t>>],
    cfg: &LossConfig,
) -> (Var<'t>, usize) {
    let mut sum = Var::constant(0.0);
    let mut valid = 0;
    for (p, x) in plans.iter().zip(points) {
        let c = &p.corr;
        let residual = |view: usize, px: [f64; 2]| -> Option<Var<'t>> {
            let uv = project_with(x, &cams[view], &intrinsics[view]).ok()?;
            Some(((uv[0] - px[0]).abs() + (uv[1] - px[1]).abs()).min_c(cfg.rho_max))
        };
        if let (Some(ri), Some(rj)) = (residual(c.view_i, c.pixel_i), residual(c.view_j, c.pixel_j)) {
            sum = sum + ri + rj;
            valid += 1;
        }
    }
    if valid == 0 {
        return (Var::constant(0.0), 0);
    }
    (sum * (1.0 / valid as f64), valid)
}

/// Mean of `1 − NCC` over patches centered on the reference pixels, with
/// the target patch warped by the homography of the local tangent plane.
/// Returns the term, the number of evaluated patches and the number skipped.
#[allow(clippy::too_many_arguments)]
pub fn record_patches<'t, F: SignedDistance + ?Sized>(
    field: &F,
    tape: &'t Tape,
    cams: &[Rigid<Var<'t>>],
    intrinsics: &[Intrinsics],
    grays: &[GrayImage],
    plans: &[CorrespondencePlan],
    points: &[Vec3<Var<'t>>],
    cfg: &LossConfig,
) -> (Var<'t>, usize, usize) {
    let grads = field.record(tape, points, true);
    let h = cfg.patch_half_extent as i64;
    let mut sum = Var::constant(0.0);
    let (mut valid, mut skipped) = (0, 0);
    for ((p, x), (_, g)) in plans.iter().zip(points).zip(&grads) {
        let c = &p.corr;
        let (cam_i, cam_j) = (&cams[c.view_i], &cams[c.view_j]);
        let g_norm = g.norm();
        if g_norm.value() <= 0.0 {
            skipped += 1;
            continue;
        }
        let n_cam = cam_i.rotation.mul_vec(&(*g / g_norm));
        let p_cam = cam_i.apply(x);
        let d = -n_cam.dot(&p_cam);
        let Ok(transfer) = plane_transfer(cam_i, cam_j, &intrinsics[c.view_i], &intrinsics[c.view_j], &n_cam, d) else {
            skipped += 1;
            continue;
        };
        let (gi, gj) = (&grays[c.view_i], &grays[c.view_j]);
        let mut reference = Vec::with_capacity(((2 * h + 1) * (2 * h + 1)) as usize);
        let mut target = Vec::with_capacity(reference.capacity());
        let mut inside = true;
        'grid: for dv in -h..=h {
            for du in -h..=h {
                let (u, v) = (c.pixel_i[0] + du as f64, c.pixel_i[1] + dv as f64);
                let Some((a, _, _)) = gi.sample(u, v) else {
                    inside = false;
                    break 'grid;
                };
                let q = apply_homography(&transfer, Var::constant(u), Var::constant(v));
                let Some(b) = gj.sample_var(q[0], q[1]) else {
                    inside = false;
                    break 'grid;
                };
                reference.push(a);
                target.push(b);
            }
        }
        if !inside {
            skipped += 1;
            continue;
        }
        match ncc(&reference, &target, cfg.tau_var, cfg.ncc_variance_product) {
            Some(score) => {
                sum = sum + (-score + 1.0);
                valid += 1;
            }
            None => skipped += 1,
        }
    }
    if valid == 0 {
        return (Var::constant(0.0), 0, skipped);
    }
    (sum * (1.0 / valid as f64), valid, skipped)
}

/// Loss terms of one step before weighting.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<T> {
    pub color: T,
    pub reproj: T,
    pub ncc: T,
    pub eikonal: T,
    pub valid_correspondences: usize,
    pub skipped_patches: usize,
}

/// `E = L_color + λ_r L_r + λ_ncc L_ncc + λ_reg L_reg`.
pub fn total_objective<T: Real>(parts: &LossParts<T>, cfg: &LossConfig) -> Result<(T, LossBreakdown)> {
    for (term, v) in [
        ("color", parts.color),
        ("reproj", parts.reproj),
        ("ncc", parts.ncc),
        ("eikonal", parts.eikonal),
    ] {
        if !v.value().is_finite() {
            return Err(Error::NonFiniteLoss { term });
        }
    }
    let total = parts.color + parts.reproj * cfg.lambda_r + parts.ncc * cfg.lambda_ncc + parts.eikonal * cfg.lambda_reg;
    let breakdown = LossBreakdown {
        color: parts.color.value(),
        reproj: parts.reproj.value(),
        ncc: parts.ncc.value(),
        eikonal: parts.eikonal.value(),
        total: total.value(),
        valid_correspondences: parts.valid_correspondences,
        skipped_patches: parts.skipped_patches,
    };
    Ok((total, breakdown))
}

fn constant_cams<'t>(poses: &[Pose]) -> Vec<Rigid<Var<'t>>> {
    poses.iter().map(|p| Rigid::from_f64(&p.world_to_camera())).collect()
}

/// Reprojection term at fixed poses (no warm-up). Returns the value and the
/// number of valid correspondences.
pub fn reprojection_loss<F: SignedDistance + ?Sized>(
    field: &F,
    poses: &[Pose],
    intrinsics: &[Intrinsics],
    corrs: &[Correspondence],
    icfg: &IntersectConfig,
    cfg: &LossConfig,
) -> (f64, usize) {
    let cams: Vec<Rigid> = poses.iter().map(|p| p.world_to_camera()).collect();
    let plans = plan_correspondences(field, &cams, intrinsics, corrs, icfg, None, &mut PlanStats::default());
    let tape = Tape::new();
    let cv = constant_cams(poses);
    let pts = record_surface_points(field, &tape, &cv, intrinsics, &plans, Var::constant(1.0), &RenderConfig::default());
    let (l, n) = record_reprojection(&cv, intrinsics, &plans, &pts, cfg);
    (l.value(), n)
}

/// Patch term at fixed poses. Returns the value, evaluated and skipped counts.
pub fn patch_warp_loss<F: SignedDistance + ?Sized>(
    field: &F,
    poses: &[Pose],
    intrinsics: &[Intrinsics],
    grays: &[GrayImage],
    corrs: &[Correspondence],
    icfg: &IntersectConfig,
    cfg: &LossConfig,
) -> (f64, usize, usize) {
    let cams: Vec<Rigid> = poses.iter().map(|p| p.world_to_camera()).collect();
    let mut stats = PlanStats::default();
    let plans = plan_correspondences(field, &cams, intrinsics, corrs, icfg, None, &mut stats);
    let tape = Tape::new();
    let cv = constant_cams(poses);
    let pts = record_surface_points(field, &tape, &cv, intrinsics, &plans, Var::constant(1.0), &RenderConfig::default());
    let (l, n, skipped) = record_patches(field, &tape, &cv, intrinsics, grays, &plans, &pts, cfg);
    (l.value(), n, skipped)
}
