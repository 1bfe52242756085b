use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fields::{AnalyticScene, AnalyticSdf, Texture};
use crate::geometry::{pixel_ray, project_with, se3_exp, Intrinsics, Pose, Rigid};
use crate::losses::{Correspondence, CorrespondenceSet};
use crate::real::Vec3;
use crate::rng::substream;

use super::scene::{Normalization, Scene, View};
use super::trace::{sphere_trace, sphere_trace_render, trace_limit, TRACE_STEPS, TRACE_TOLERANCE};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_views: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Camera distance from the origin.
    pub distance: f64,
    /// Total azimuth spread of the cameras in degrees.
    pub arc_deg: f64,
    pub elevation_deg: f64,
    pub n_correspondences: usize,
    /// Correspondences keep this many pixels away from the image border.
    pub border_margin: f64,
    /// Largest angle between the surface normal and either viewing direction.
    pub max_view_angle_deg: f64,
    pub background: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_views: 3,
            noise_sigma: 0.15,
            seed: 0,
            width: 96,
            height: 96,
            fov_deg: 50.0,
            distance: 2.5,
            arc_deg: 60.0,
            elevation_deg: 20.0,
            n_correspondences: 300,
            border_margin: 7.0,
            max_view_angle_deg: 60.0,
            background: [0.0; 3],
        }
    }
}

/// Shapes offered by the command line generator.
pub fn preset_shape(name: &str) -> Option<AnalyticSdf> {
    let v = |x, y, z| Vec3::new(x, y, z);
    Some(match name {
        "sphere" => AnalyticSdf::sphere(0.5),
        "box" => AnalyticSdf::Box {
            center: v(0.0, 0.0, 0.0),
            half_extents: v(0.4, 0.3, 0.35),
        },
        "torus" => AnalyticSdf::Torus {
            center: v(0.0, 0.0, 0.0),
            major: 0.6,
            minor: 0.2,
        },
        "composite" => AnalyticSdf::Union {
            shapes: vec![
                AnalyticSdf::Sphere {
                    center: v(-0.25, 0.0, 0.0),
                    radius: 0.35,
                },
                AnalyticSdf::Box {
                    center: v(0.3, 0.0, 0.1),
                    half_extents: v(0.2, 0.25, 0.2),
                },
            ],
        },
        _ => return None,
    })
}

/// Cameras on an arc around the origin, all looking at it.
pub fn camera_ring(cfg: &SynthConfig) -> Vec<Rigid> {
    let n = cfg.n_views;
    (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
            let az = (cfg.arc_deg * frac).to_radians();
            // Alternate the elevation slightly so the views are not coplanar.
            let el = (cfg.elevation_deg + if i % 2 == 0 { 0.0 } else { -0.5 * cfg.elevation_deg }).to_radians();
            let eye = Vec3::new(el.cos() * az.sin(), el.sin(), -el.cos() * az.cos()) * cfg.distance;
            Rigid::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0))
        })
        .collect()
}

/// Ground truth perturbed on the left by `exp(ξ)`, `ξ ~ N(0, σ² I₆)`.
pub fn perturb_pose<R: Rng>(gt: &Rigid, sigma: f64, rng: &mut R) -> Rigid {
    if sigma == 0.0 {
        return *gt;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let xi: [f64; 6] = std::array::from_fn(|_| normal.sample(rng));
    se3_exp(&xi).compose(gt)
}

/// Renders a textured analytic scene from a ring of cameras, synthesizes
/// visibility-checked correspondences and perturbs the poses.
pub fn generate_synthetic(shape: AnalyticSdf, texture: Texture, cfg: &SynthConfig) -> Result<Scene> {
    if cfg.n_views < 2 {
        return Err(Error::InvariantViolation(format!(
            "a scene needs at least 2 views, got {}",
            cfg.n_views
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {}", cfg.noise_sigma)));
    }
    if shape.bounding_radius() > 1.0 {
        return Err(Error::InvariantViolation("ground-truth shape leaves the unit sphere".into()));
    }
    let k = Intrinsics::from_fov(cfg.fov_deg, cfg.width, cfg.height);
    let scene = AnalyticScene::new(shape.clone(), texture);
    let cams = camera_ring(cfg);

    let mut noise_rng = substream(cfg.seed, "pose-noise");
    let views = cams
        .iter()
        .enumerate()
        .map(|(i, gt)| View {
            image_name: format!("view_{i:03}.png"),
            image: sphere_trace_render(&scene, gt, &k, cfg.background).quantized(),
            intrinsics: k,
            pose: Pose::new(perturb_pose(gt, cfg.noise_sigma, &mut noise_rng)),
            pose_gt: Some(*gt),
        })
        .collect();

    let correspondences = synthesize_correspondences(&shape, &cams, &k, cfg)?;
    Ok(Scene {
        views,
        correspondences,
        normalization: Normalization::default(),
        gt_shape: Some(shape),
        gt_mesh: None,
    })
}

fn first_hit(shape: &AnalyticSdf, cam: &Rigid, k: &Intrinsics, pixel: [f64; 2]) -> Option<(Vec3, f64)> {
    let ray = pixel_ray(pixel, cam, k);
    let mut t = sphere_trace(shape, &ray, TRACE_STEPS, TRACE_TOLERANCE, trace_limit(shape, &ray))?;
    // Polish the traced hit down to rounding.
    for _ in 0..4 {
        let x = ray.at(t);
        let slope = shape.gradient(&x).dot(&ray.direction);
        let f = shape.distance(&x);
        if slope > -1e-3 || f == 0.0 {
            break;
        }
        let next = t - f / slope;
        if shape.distance(&ray.at(next)).abs() >= f.abs() {
            break;
        }
        t = next;
    }
    Some((ray.at(t), t))
}

fn synthesize_correspondences(
    shape: &AnalyticSdf,
    cams: &[Rigid],
    k: &Intrinsics,
    cfg: &SynthConfig,
) -> Result<CorrespondenceSet> {
    let mut rng = substream(cfg.seed, "correspondences");
    let m = cfg.border_margin;
    let inside = |p: [f64; 2]| {
        p[0] >= m && p[1] >= m && p[0] <= k.width as f64 - 1.0 - m && p[1] <= k.height as f64 - 1.0 - m
    };
    let n = cams.len();
    let mut entries = Vec::with_capacity(cfg.n_correspondences);
    let max_attempts = 200 * cfg.n_correspondences.max(1);
    let mut attempts = 0;
    while entries.len() < cfg.n_correspondences && attempts < max_attempts {
        attempts += 1;
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        if m * 2.0 >= (k.width.min(k.height) as f64) - 1.0 {
            break;
        }
        let pixel_i = [
            rng.random_range(m..=k.width as f64 - 1.0 - m),
            rng.random_range(m..=k.height as f64 - 1.0 - m),
        ];
        let Some((x, _)) = first_hit(shape, &cams[i], k, pixel_i) else {
            continue;
        };
        let normal = shape.gradient(&x).normalize();
        let min_cos = cfg.max_view_angle_deg.to_radians().cos();
        if [i, j].iter().any(|&v| normal.dot(&(cams[v].center() - x).normalize()) < min_cos.max(1e-9)) {
            continue;
        }
        let Ok(pixel_j) = project_with(&x, &cams[j], k) else {
            continue;
        };
        if !inside(pixel_j) {
            continue;
        }
        // Occlusion: the first hit seen from view j must be the same point.
        match first_hit(shape, &cams[j], k, pixel_j) {
            Some((y, _)) if (y - x).norm() < 1e-4 => {}
            _ => continue,
        }
        let back = project_with(&x, &cams[i], k)?;
        if (back[0] - pixel_i[0]).hypot(back[1] - pixel_i[1]) >= 0.5 {
            continue;
        }
        entries.push(Correspondence {
            view_i: i,
            view_j: j,
            pixel_i,
            pixel_j,
            confidence: 1.0,
        });
    }
    Ok(CorrespondenceSet::new(entries))
}
