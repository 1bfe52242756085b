use crate::fields::{AnalyticScene, AnalyticSdf};
use crate::geometry::{pixel_ray, Intrinsics, Ray, Rigid};

use super::image::Image;

pub const TRACE_STEPS: usize = 512;
pub const TRACE_TOLERANCE: f64 = 1e-6;

/// First hit of `ray` with the zero level set, marching by the distance.
pub fn sphere_trace(shape: &AnalyticSdf, ray: &Ray, max_steps: usize, tolerance: f64, t_max: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..max_steps {
        let f = shape.distance(&ray.at(t));
        if f.abs() < tolerance {
            return Some(t);
        }
        t += f;
        if t > t_max || t < 0.0 {
            return None;
        }
    }
    None
}

/// Marching limit that covers the whole shape from the ray origin.
pub fn trace_limit(shape: &AnalyticSdf, ray: &Ray) -> f64 {
    ray.origin.norm() + shape.bounding_radius() + 1.0
}

/// Reference renderer: sphere traced first hits, shaded texture on hits and
/// `background` elsewhere.
pub fn sphere_trace_render(scene: &AnalyticScene, cam: &Rigid, k: &Intrinsics, background: [f64; 3]) -> Image {
    let mut img = Image::filled(k.width, k.height, background);
    for y in 0..k.height {
        for x in 0..k.width {
            let ray = pixel_ray([x as f64, y as f64], cam, k);
            let limit = trace_limit(&scene.shape, &ray);
            if let Some(t) = sphere_trace(&scene.shape, &ray, TRACE_STEPS, TRACE_TOLERANCE, limit) {
                let c = scene.shade(&ray.at(t));
                img.set_pixel(x, y, c.map(|v| v.clamp(0.0, 1.0)));
            }
        }
    }
    img
}
