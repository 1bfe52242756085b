//! Volume rendering of a signed distance field with logistic-density weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::fields::{ColorField, SignedDistance};
use crate::geometry::Ray;
use crate::real::{sigmoid_f64, Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_importance: usize,
    pub up_sample_steps: usize,
    pub perturb: bool,
    pub background: [f64; 3],
    /// Radius of the sphere that bounds the scene; sets near/far per ray.
    pub bound_radius: f64,
    pub eps_w: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_importance: 64,
            up_sample_steps: 4,
            perturb: true,
            background: [0.0; 3],
            bound_radius: 1.2,
            eps_w: 1e-4,
        }
    }
}

/// Inverse standard deviation of the logistic density, `s = exp(10 v)`.
pub fn inv_s<T: Real>(variance: T) -> T {
    (variance * 10.0).exp()
}

/// Initial value of the variance parameter `v`.
pub const INIT_VARIANCE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t_values: Vec<f64>,
    pub sdf_values: Vec<f64>,
    pub positions: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    pub accumulated_weight: f64,
    pub expected_depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenderedDepth {
    Surface(f64),
    /// Accumulated weight below `eps_w`; carries the far bound.
    Miss { far: f64 },
}

impl RenderedDepth {
    pub fn value(self) -> f64 {
        match self {
            RenderedDepth::Surface(t) => t,
            RenderedDepth::Miss { far } => far,
        }
    }

    pub fn is_miss(self) -> bool {
        matches!(self, RenderedDepth::Miss { .. })
    }
}

/// Per-sample weights from consecutive SDF values. The last entry is 0.
///
/// `α_k = max(1 − Φ(s f_{k+1}) / Φ(s f_k), 0)` evaluated in log space, and
/// `T_k = Π_{j<k} (1 − α_j)`.
pub fn neus_weights<T: Real>(sdf: &[T], s: T) -> Vec<T> {
    let n = sdf.len();
    let mut w = Vec::with_capacity(n);
    if n == 0 {
        return w;
    }
    let log_phi: Vec<T> = sdf.iter().map(|&f| (f * s).log_sigmoid()).collect();
    let mut log_t = T::zero();
    for k in 0..n - 1 {
        let delta = (log_phi[k + 1] - log_phi[k]).min_c(0.0);
        let alpha = -(delta.exp() - 1.0);
        w.push(alpha * log_t.exp());
        log_t = log_t + delta;
    }
    w.push(T::zero());
    w
}

pub struct Composite<T> {
    pub rgb: [T; 3],
    pub weights: Vec<T>,
    pub accumulated: T,
    /// `Σ w_k t̄_k / max(Σ w_k, ε_w)` with `t̄_k` the interval midpoint.
    pub depth: T,
}

/// Alpha-composites per-sample colors over the background.
pub fn composite<T: Real>(
    sdf: &[T],
    colors: &[[T; 3]],
    t: &[f64],
    s: T,
    background: [f64; 3],
    eps_w: f64,
) -> Composite<T> {
    let weights = neus_weights(sdf, s);
    let mut rgb = [T::zero(); 3];
    let mut acc = T::zero();
    let mut depth = T::zero();
    for k in 0..weights.len().saturating_sub(1) {
        let w = weights[k];
        acc = acc + w;
        depth = depth + w * (0.5 * (t[k] + t[k + 1]));
        for c in 0..3 {
            rgb[c] = rgb[c] + w * colors[k][c];
        }
    }
    let rest = -(acc - 1.0);
    for c in 0..3 {
        rgb[c] = (rgb[c] + rest * background[c]).max_c(0.0).min_c(1.0);
    }
    let depth = depth / acc.max_c(eps_w);
    Composite {
        rgb,
        weights,
        accumulated: acc,
        depth,
    }
}

/// Sample depths of one ray, fixed before any taped evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RayPlan {
    pub near: f64,
    pub far: f64,
    pub t: Vec<f64>,
}

fn coarse_depths<R: Rng + ?Sized>(near: f64, far: f64, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    match rng {
        None => (0..n)
            .map(|i| near + (far - near) * i as f64 / (n - 1) as f64)
            .collect(),
        Some(rng) => {
            let step = (far - near) / n as f64;
            (0..n)
                .map(|i| near + (i as f64 + rng.random::<f64>()) * step)
                .collect()
        }
    }
}

/// Weights used to place importance samples: the section SDF slope is
/// estimated from neighbours and clamped to be non-positive.
fn up_sample_weights(t: &[f64], f: &[f64], s: f64) -> Vec<f64> {
    let n = t.len();
    let mut w = Vec::with_capacity(n - 1);
    let mut trans = 1.0;
    let mut prev_cos = 0.0;
    for k in 0..n - 1 {
        let dist = t[k + 1] - t[k];
        let mid = 0.5 * (f[k] + f[k + 1]);
        let cos = (f[k + 1] - f[k]) / (dist + 1e-5);
        let c = f64::min(cos, prev_cos).clamp(-1e3, 0.0);
        prev_cos = cos;
        let prev_f = mid - c * dist * 0.5;
        let next_f = mid + c * dist * 0.5;
        let pc = sigmoid_f64(prev_f * s);
        let nc = sigmoid_f64(next_f * s);
        let alpha = ((pc - nc + 1e-5) / (pc + 1e-5)).clamp(0.0, 1.0);
        w.push(alpha * trans);
        trans *= 1.0 - alpha + 1e-7;
    }
    w
}

/// Deterministic inverse-CDF sampling of `count` depths from piecewise
/// constant interval weights.
fn sample_pdf(t: &[f64], w: &[f64], count: usize) -> Vec<f64> {
    let pdf: Vec<f64> = w.iter().map(|v| v + 1e-5).collect();
    let total: f64 = pdf.iter().sum();
    let mut cdf = Vec::with_capacity(pdf.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for p in &pdf {
        acc += p / total;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(count);
    let mut bin = 0;
    for i in 0..count {
        let u = (i as f64 + 0.5) / count as f64;
        while bin + 1 < pdf.len() && cdf[bin + 1] < u {
            bin += 1;
        }
        let span = cdf[bin + 1] - cdf[bin];
        let frac = if span > 0.0 { (u - cdf[bin]) / span } else { 0.0 };
        out.push(t[bin] + frac.clamp(0.0, 1.0) * (t[bin + 1] - t[bin]));
    }
    out
}

/// Merges `(depth, sdf)` samples, dropping repeated depths.
fn merge_sorted(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = a.0.iter().zip(a.1).chain(b.0.iter().zip(b.1)).map(|(&t, &f)| (t, f)).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.dedup_by(|x, y| x.0 == y.0);
    pairs.into_iter().unzip()
}

/// Coarse samples plus hierarchical importance samples around sign changes.
pub fn sample_ray<F: SignedDistance + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
    rng: Option<&mut R>,
) -> RaySamples {
    assert!(near < far && cfg.n_coarse >= 2);
    let rng = if cfg.perturb { rng } else { None };
    let mut t = coarse_depths(near, far, cfg.n_coarse, rng);
    let mut f = field.eval(&t.iter().map(|&ti| ray.at(ti)).collect::<Vec<_>>());
    let steps = cfg.up_sample_steps.max(1);
    if cfg.n_importance > 0 {
        for i in 0..steps {
            let count = cfg.n_importance / steps + usize::from(i < cfg.n_importance % steps);
            if count == 0 {
                continue;
            }
            let s_up = 64.0 * f64::powi(2.0, i as i32);
            let w = up_sample_weights(&t, &f, s_up);
            let new_t = sample_pdf(&t, &w, count);
            let new_f = field.eval(&new_t.iter().map(|&ti| ray.at(ti)).collect::<Vec<_>>());
            (t, f) = merge_sorted((&t, &f), (&new_t, &new_f));
        }
    }
    let positions = t.iter().map(|&ti| ray.at(ti)).collect();
    RaySamples {
        t_values: t,
        sdf_values: f,
        positions,
    }
}

/// Plans the samples of one ray; `None` when it misses the scene bound.
pub fn plan_ray<F: SignedDistance + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &RenderConfig,
    rng: Option<&mut R>,
) -> Option<RayPlan> {
    let (near, far) = ray.sphere_range(cfg.bound_radius)?;
    if far - near < 1e-9 {
        return None;
    }
    let samples = sample_ray(field, ray, near, far, cfg, rng);
    Some(RayPlan {
        near,
        far,
        t: samples.t_values,
    })
}

/// Renders one ray; `None` when it misses the scene bound.
pub fn render_pixel<F: ColorField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    s: f64,
    cfg: &RenderConfig,
    rng: Option<&mut R>,
) -> Option<RenderResult> {
    let (near, far) = ray.sphere_range(cfg.bound_radius)?;
    let samples = sample_ray(field, ray, near, far, cfg, rng);
    let dirs = vec![ray.direction; samples.positions.len()];
    let eval = field.eval_color(&samples.positions, &dirs);
    let sdf: Vec<f64> = eval.iter().map(|e| e.0).collect();
    let colors: Vec<[f64; 3]> = eval.iter().map(|e| e.1).collect();
    let c = composite(&sdf, &colors, &samples.t_values, s, cfg.background, cfg.eps_w);
    let expected_depth = if c.accumulated < cfg.eps_w { far } else { c.depth };
    Some(RenderResult {
        rgb: c.rgb,
        weights: c.weights,
        accumulated_weight: c.accumulated,
        expected_depth,
    })
}

/// Expected depth along `ray`; `None` when it misses the scene bound.
pub fn render_depth<F: SignedDistance + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    s: f64,
    cfg: &RenderConfig,
    rng: Option<&mut R>,
) -> Option<RenderedDepth> {
    let (near, far) = ray.sphere_range(cfg.bound_radius)?;
    let samples = sample_ray(field, ray, near, far, cfg, rng);
    Some(depth_from(&samples.sdf_values, &samples.t_values, s, far, cfg.eps_w))
}

fn depth_from(sdf: &[f64], t: &[f64], s: f64, far: f64, eps_w: f64) -> RenderedDepth {
    let no_color = vec![[0.0; 3]; sdf.len()];
    let c = composite(sdf, &no_color, t, s, [0.0; 3], eps_w);
    if c.accumulated < eps_w {
        RenderedDepth::Miss { far }
    } else {
        RenderedDepth::Surface(c.depth)
    }
}

/// Taped output of one rendered ray.
#[derive(Clone, Copy, Debug)]
pub struct TapedRender<'t> {
    pub rgb: [Var<'t>; 3],
    pub accumulated: Var<'t>,
    pub depth: Var<'t>,
}

/// Records a batch of planned rays in one field evaluation. Ray origins and
/// directions may depend on pose variables; the sample depths are constants.
pub fn record_render<'t, F: ColorField + ?Sized>(
    field: &F,
    tape: &'t Tape,
    rays: &[Ray<Var<'t>>],
    plans: &[RayPlan],
    s: Var<'t>,
    cfg: &RenderConfig,
) -> Vec<TapedRender<'t>> {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for (ray, plan) in rays.iter().zip(plans) {
        for &t in &plan.t {
            points.push(ray.at(t));
            dirs.push(ray.direction);
        }
    }
    let eval = field.record_color(tape, &points, &dirs);
    let mut out = Vec::with_capacity(rays.len());
    let mut offset = 0;
    for plan in plans {
        let m = plan.t.len();
        let chunk = &eval[offset..offset + m];
        offset += m;
        let sdf: Vec<Var> = chunk.iter().map(|e| e.0).collect();
        let colors: Vec<[Var; 3]> = chunk.iter().map(|e| e.1).collect();
        let c = composite(&sdf, &colors, &plan.t, s, cfg.background, cfg.eps_w);
        out.push(TapedRender {
            rgb: c.rgb,
            accumulated: c.accumulated,
            depth: c.depth,
        });
    }
    out
}

/// Records expected depths of planned rays (SDF only). Misses are `None`.
pub fn record_depth<'t, F: SignedDistance + ?Sized>(
    field: &F,
    tape: &'t Tape,
    rays: &[Ray<Var<'t>>],
    plans: &[RayPlan],
    s: Var<'t>,
    cfg: &RenderConfig,
) -> Vec<Option<Var<'t>>> {
    let points: Vec<Vec3<Var>> = rays
        .iter()
        .zip(plans)
        .flat_map(|(ray, plan)| plan.t.iter().map(move |&t| ray.at(t)))
        .collect();
    let eval = field.record(tape, &points, false);
    let mut out = Vec::with_capacity(rays.len());
    let mut offset = 0;
    for plan in plans {
        let m = plan.t.len();
        let sdf: Vec<Var> = eval[offset..offset + m].iter().map(|e| e.0).collect();
        offset += m;
        let no_color = vec![[Var::constant(0.0); 3]; m];
        let c = composite(&sdf, &no_color, &plan.t, s, [0.0; 3], cfg.eps_w);
        out.push((c.accumulated.value() >= cfg.eps_w).then_some(c.depth));
    }
    out
}
