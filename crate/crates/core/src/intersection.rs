//! First ray/zero-level-set intersection: a uniform sign scan followed by a
//! Newton correction along the ray that is differentiable w.r.t. the field
//! parameters and the camera pose.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fields::SignedDistance;
use crate::geometry::Ray;
use crate::real::{Real, Vec3};
use crate::rendering::RenderedDepth;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectConfig {
    pub n_samples: usize,
    pub tau_surf: f64,
    pub tau_graze: f64,
    pub newton_iters: usize,
    pub bound_radius: f64,
}

impl Default for IntersectConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            tau_surf: 1e-3,
            tau_graze: 1e-4,
            newton_iters: 1,
            bound_radius: 1.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub depth: f64,
    pub normal: Vec3,
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntersectStats {
    pub hits: usize,
    pub misses: usize,
    pub grazing: usize,
    pub off_surface: usize,
}

/// Smallest `k` with `f_k > 0` and `f_{k+1} < 0`.
pub fn find_sign_change(sdf: &[f64]) -> Option<usize> {
    sdf.windows(2).position(|w| w[0] > 0.0 && w[1] < 0.0)
}

/// Everything the taped Newton step needs, fixed in plain arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePlan {
    /// Depth the differentiable step starts from.
    pub t_k: f64,
    /// `⟨∇f(x_k), v⟩`, held constant under differentiation.
    pub slope: f64,
    pub point: SurfacePoint,
}

fn newton_plan<F: SignedDistance + ?Sized>(field: &F, ray: &Ray, t0: f64, cfg: &IntersectConfig) -> Result<SurfacePlan> {
    let mut t_k = t0;
    let step = |t: f64| -> Result<(f64, f64)> {
        let (f, g) = field.eval_grad(&[ray.at(t)])[0];
        let slope = g.dot(&ray.direction);
        if slope.abs() < cfg.tau_graze {
            return Err(Error::GrazingRay { cosine: slope });
        }
        Ok((t - f / slope, slope))
    };
    let iters = cfg.newton_iters.max(1);
    for _ in 0..iters - 1 {
        t_k = step(t_k)?.0;
    }
    let (t_star, slope) = step(t_k)?;
    let position = ray.at(t_star);
    let (f_star, grad) = field.eval_grad(&[position])[0];
    let n = grad.norm();
    let normal = if n > 0.0 { grad / n } else { Vec3::zeros() };
    Ok(SurfacePlan {
        t_k,
        slope,
        point: SurfacePoint {
            position,
            depth: t_star,
            normal,
            valid: f_star.abs() < cfg.tau_surf,
        },
    })
}

/// One Newton step along the ray from depth `t_k`:
/// `P* = x_k − v f(x_k) / ⟨∇f(x_k), v⟩`.
pub fn newton_correct<F: SignedDistance + ?Sized>(field: &F, ray: &Ray, t_k: f64, cfg: &IntersectConfig) -> Result<SurfacePoint> {
    let single = IntersectConfig {
        newton_iters: 1,
        ..*cfg
    };
    newton_plan(field, ray, t_k, &single).map(|p| p.point)
}

/// Scans `n_samples` uniform depths on `[near, far]` and corrects the first
/// outside-to-inside bracket. Only valid points are returned.
pub fn plan_intersection_range<F: SignedDistance + ?Sized>(
    field: &F,
    ray: &Ray,
    near: f64,
    far: f64,
    cfg: &IntersectConfig,
    stats: &mut IntersectStats,
) -> Option<SurfacePlan> {
    let n = cfg.n_samples.max(2);
    let ts: Vec<f64> = (0..n)
        .map(|i| near + (far - near) * i as f64 / (n - 1) as f64)
        .collect();
    let pts: Vec<Vec3> = ts.iter().map(|&t| ray.at(t)).collect();
    let f = field.eval(&pts);
    let Some(k) = find_sign_change(&f) else {
        stats.misses += 1;
        return None;
    };
    match newton_plan(field, ray, ts[k], cfg) {
        Err(_) => {
            stats.grazing += 1;
            None
        }
        Ok(plan) if !plan.point.valid => {
            stats.off_surface += 1;
            None
        }
        Ok(plan) => {
            stats.hits += 1;
            Some(plan)
        }
    }
}

/// As [`plan_intersection_range`] with near/far from the scene bound.
pub fn plan_intersection<F: SignedDistance + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &IntersectConfig,
    stats: &mut IntersectStats,
) -> Option<SurfacePlan> {
    match ray.sphere_range(cfg.bound_radius) {
        Some((near, far)) => plan_intersection_range(field, ray, near, far, cfg, stats),
        None => {
            stats.misses += 1;
            None
        }
    }
}

pub fn intersect<F: SignedDistance + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &IntersectConfig,
    stats: &mut IntersectStats,
) -> Option<SurfacePoint> {
    plan_intersection(field, ray, cfg, stats).map(|p| p.point)
}

/// Records `P*` for planned rays in one field evaluation. `t_k` and the
/// slope are constants; `f(x_k)` carries gradients to the field parameters
/// and, through `x_k = c + t_k v`, to the pose.
pub fn record_intersections<'t, F: SignedDistance + ?Sized>(
    field: &F,
    tape: &'t Tape,
    rays: &[Ray<Var<'t>>],
    plans: &[SurfacePlan],
) -> Vec<Vec3<Var<'t>>> {
    let base: Vec<Vec3<Var>> = rays.iter().zip(plans).map(|(r, p)| r.at(p.t_k)).collect();
    let f = field.record(tape, &base, false);
    base.iter()
        .zip(rays)
        .zip(plans)
        .zip(&f)
        .map(|(((x, r), p), (fx, _))| *x - r.direction.scale(*fx / p.slope))
        .collect()
}

/// Replaces `P*` by the rendered-depth point `P_d = c + t_d v` when the two
/// disagree by more than `threshold`. Returns the point and whether it was
/// substituted.
pub fn warmup_filter(p_star: Vec3, ray: &Ray, depth: RenderedDepth, threshold: f64) -> (Vec3, bool) {
    match depth {
        RenderedDepth::Miss { .. } => (p_star, false),
        RenderedDepth::Surface(t_d) => {
            let p_d = ray.at(t_d);
            if (p_star - p_d).norm() > threshold {
                (p_d, true)
            } else {
                (p_star, false)
            }
        }
    }
}

/// Whether the warm-up filter substitutes (same rule as [`warmup_filter`]).
pub fn substitutes<T: Real>(p_star: &Vec3<T>, p_d: &Vec3<T>, threshold: f64) -> bool {
    (p_star.value() - p_d.value()).norm() > threshold
}
