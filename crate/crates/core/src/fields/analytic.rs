//! Closed-form signed distance functions and procedural textures. They are
//! the ground truth of synthetic scenes and the oracles for the neural
//! field's intersection and rendering paths.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::real::{Real, Vec3};

use super::{ColorField, SignedDistance};

/// Distance reported by an empty union.
const EMPTY_DISTANCE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSdf {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// Torus around the z axis.
    Torus { center: Vec3, major: f64, minor: f64 },
    Union { shapes: Vec<AnalyticSdf> },
}

fn sign<T: Real>(v: T) -> f64 {
    if v.value() < 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl AnalyticSdf {
    pub fn sphere(radius: f64) -> Self {
        AnalyticSdf::Sphere {
            center: Vec3::zeros(),
            radius,
        }
    }

    pub fn distance<T: Real>(&self, x: &Vec3<T>) -> T {
        match self {
            AnalyticSdf::Sphere { center, radius } => (*x - Vec3::from_f64(*center)).norm() - *radius,
            AnalyticSdf::Box {
                center,
                half_extents,
            } => {
                let p = *x - Vec3::from_f64(*center);
                let q = Vec3::new(
                    p.x.abs() - half_extents.x,
                    p.y.abs() - half_extents.y,
                    p.z.abs() - half_extents.z,
                );
                let outside = q.map(|v| v.max_c(0.0));
                let inside = q.x.max(q.y).max(q.z);
                if inside.value() > 0.0 {
                    outside.norm()
                } else {
                    inside
                }
            }
            AnalyticSdf::Torus {
                center,
                major,
                minor,
            } => {
                let p = *x - Vec3::from_f64(*center);
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let qx = rho - *major;
                (qx * qx + p.z * p.z).sqrt() - *minor
            }
            AnalyticSdf::Union { shapes } => shapes
                .iter()
                .map(|s| s.distance(x))
                .reduce(|a, b| a.min(b))
                .unwrap_or_else(|| T::cst(EMPTY_DISTANCE)),
        }
    }

    /// Exact gradient, piecewise where the distance is piecewise.
    pub fn gradient<T: Real>(&self, x: &Vec3<T>) -> Vec3<T> {
        match self {
            AnalyticSdf::Sphere { center, .. } => (*x - Vec3::from_f64(*center)).normalize(),
            AnalyticSdf::Box {
                center,
                half_extents,
            } => {
                let p = *x - Vec3::from_f64(*center);
                let s = [sign(p.x), sign(p.y), sign(p.z)];
                let q = [
                    p.x.abs() - half_extents.x,
                    p.y.abs() - half_extents.y,
                    p.z.abs() - half_extents.z,
                ];
                if q.iter().any(|v| v.value() > 0.0) {
                    let m = Vec3::new(q[0].max_c(0.0), q[1].max_c(0.0), q[2].max_c(0.0));
                    let len = m.norm();
                    Vec3::new(m.x * s[0], m.y * s[1], m.z * s[2]) / len
                } else {
                    let i = (0..3)
                        .max_by(|&a, &b| q[a].value().total_cmp(&q[b].value()))
                        .unwrap_or(0);
                    let mut g = [T::zero(); 3];
                    g[i] = T::cst(s[i]);
                    Vec3::from_array(g)
                }
            }
            AnalyticSdf::Torus { center, major, .. } => {
                let p = *x - Vec3::from_f64(*center);
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let qx = rho - *major;
                let len = (qx * qx + p.z * p.z).sqrt();
                let radial = qx / (rho * len);
                Vec3::new(p.x * radial, p.y * radial, p.z / len)
            }
            AnalyticSdf::Union { shapes } => {
                let best = shapes
                    .iter()
                    .min_by(|a, b| a.distance(x).value().total_cmp(&b.distance(x).value()));
                match best {
                    Some(s) => s.gradient(x),
                    None => Vec3::zeros(),
                }
            }
        }
    }

    /// Radius of a centered sphere bounding the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            AnalyticSdf::Sphere { center, radius } => center.norm() + radius,
            AnalyticSdf::Box {
                center,
                half_extents,
            } => center.norm() + half_extents.norm(),
            AnalyticSdf::Torus {
                center,
                major,
                minor,
            } => center.norm() + major + minor,
            AnalyticSdf::Union { shapes } => shapes
                .iter()
                .map(|s| s.bounding_radius())
                .fold(0.0, f64::max),
        }
    }
}

impl SignedDistance for AnalyticSdf {
    fn eval(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|p| self.distance(p)).collect()
    }

    fn eval_grad(&self, points: &[Vec3]) -> Vec<(f64, Vec3)> {
        points.iter().map(|p| (self.distance(p), self.gradient(p))).collect()
    }

    fn record<'t>(
        &self,
        _tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        with_grad: bool,
    ) -> Vec<(Var<'t>, Vec3<Var<'t>>)> {
        points
            .iter()
            .map(|p| {
                let g = if with_grad {
                    self.gradient(p)
                } else {
                    Vec3::zeros()
                };
                (self.distance(p), g)
            })
            .collect()
    }
}

/// Smooth procedural albedo: per channel, a bias plus two plane waves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f64; 3],
    pub waves: Vec<Wave>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub channel: usize,
    pub amplitude: f64,
    pub direction: Vec3,
    pub phase: f64,
}

impl Texture {
    pub fn constant(rgb: [f64; 3]) -> Self {
        Self {
            base: rgb,
            waves: Vec::new(),
        }
    }

    /// Default texture of synthetic scenes: wavelengths of 0.4–0.8 scene
    /// units, non-periodic across channels. Values stay inside [0.05, 0.95].
    pub fn waves() -> Self {
        let w = |channel, amplitude, d: [f64; 3], phase| Wave {
            channel,
            amplitude,
            direction: Vec3::from_array(d),
            phase,
        };
        Self {
            base: [0.5, 0.5, 0.5],
            waves: vec![
                w(0, 0.25, [9.0, 3.0, -2.0], 0.3),
                w(0, 0.18, [-2.0, 7.0, 8.0], 1.7),
                w(1, 0.24, [1.0, -10.0, 4.0], 2.1),
                w(1, 0.2, [8.0, 2.0, 7.0], 0.9),
                w(2, 0.22, [-6.0, -5.0, 9.0], 4.0),
                w(2, 0.2, [5.0, 8.0, -3.0], 5.2),
            ],
        }
    }

    pub fn albedo<T: Real>(&self, x: &Vec3<T>) -> [T; 3] {
        let mut c = self.base.map(T::cst);
        for w in &self.waves {
            c[w.channel] = c[w.channel] + (Vec3::from_f64(w.direction).dot(x) + w.phase).sin() * w.amplitude;
        }
        c
    }
}

/// An analytic shape with a texture under a fixed directional light.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub shape: AnalyticSdf,
    pub texture: Texture,
    /// Unit vector toward the light; `None` renders unshaded albedo.
    pub light: Option<Vec3>,
    pub ambient: f64,
}

impl AnalyticScene {
    pub fn new(shape: AnalyticSdf, texture: Texture) -> Self {
        Self {
            shape,
            texture,
            light: Some(Vec3::new(-0.4, -0.6, -0.7).normalize()),
            ambient: 0.35,
        }
    }

    pub fn unshaded(shape: AnalyticSdf, texture: Texture) -> Self {
        Self {
            shape,
            texture,
            light: None,
            ambient: 1.0,
        }
    }

    /// Shaded color at a point (normal taken from the SDF gradient).
    pub fn shade<T: Real>(&self, x: &Vec3<T>) -> [T; 3] {
        let albedo = self.texture.albedo(x);
        match self.light {
            None => albedo,
            Some(l) => {
                let n = self.shape.gradient(x);
                let lambert = n.dot(&Vec3::from_f64(l)).max_c(0.0);
                let s = lambert * (1.0 - self.ambient) + self.ambient;
                albedo.map(|c| c * s)
            }
        }
    }
}

impl SignedDistance for AnalyticScene {
    fn eval(&self, points: &[Vec3]) -> Vec<f64> {
        self.shape.eval(points)
    }

    fn eval_grad(&self, points: &[Vec3]) -> Vec<(f64, Vec3)> {
        self.shape.eval_grad(points)
    }

    fn record<'t>(
        &self,
        tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        with_grad: bool,
    ) -> Vec<(Var<'t>, Vec3<Var<'t>>)> {
        self.shape.record(tape, points, with_grad)
    }
}

impl ColorField for AnalyticScene {
    fn eval_color(&self, points: &[Vec3], _dirs: &[Vec3]) -> Vec<(f64, [f64; 3])> {
        points.iter().map(|p| (self.shape.distance(p), self.shade(p))).collect()
    }

    fn record_color<'t>(
        &self,
        _tape: &'t Tape,
        points: &[Vec3<Var<'t>>],
        _dirs: &[Vec3<Var<'t>>],
    ) -> Vec<(Var<'t>, [Var<'t>; 3])> {
        points.iter().map(|p| (self.shape.distance(p), self.shade(p))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shapes() -> Vec<AnalyticSdf> {
        vec![
            AnalyticSdf::sphere(1.0),
            AnalyticSdf::Box {
                center: Vec3::new(0.1, 0.0, -0.1),
                half_extents: Vec3::new(0.3, 0.4, 0.5),
            },
            AnalyticSdf::Torus {
                center: Vec3::zeros(),
                major: 0.6,
                minor: 0.2,
            },
            AnalyticSdf::Union {
                shapes: vec![
                    AnalyticSdf::Sphere {
                        center: Vec3::new(0.4, 0.0, 0.0),
                        radius: 0.3,
                    },
                    AnalyticSdf::Sphere {
                        center: Vec3::new(-0.4, 0.0, 0.0),
                        radius: 0.3,
                    },
                ],
            },
        ]
    }

    #[test]
    fn sphere_radial_distance() {
        let s = AnalyticSdf::sphere(1.0);
        let p = Vec3::new(0.0, 0.0, 2.0);
        assert_eq!(s.distance(&p), 1.0);
        assert_eq!(s.gradient(&p), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn gradients_have_unit_norm_and_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for shape in shapes() {
            for _ in 0..200 {
                let p = Vec3::new(
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                );
                let g = shape.gradient(&p);
                assert!((g.norm() - 1.0).abs() < 1e-9, "{shape:?} {p:?}");
                let h = 1e-7;
                for d in 0..3 {
                    let mut e = [0.0; 3];
                    e[d] = h;
                    let e = Vec3::from_array(e);
                    let fd = (shape.distance(&(p + e)) - shape.distance(&(p - e))) / (2.0 * h);
                    // Kinks (box edges, union seams) are measure-zero; allow slack there.
                    if (fd - g[d]).abs() > 1e-5 {
                        let near_kink = (shape.distance(&(p + e * 1e3)) - shape.distance(&p)
                            - (shape.distance(&p) - shape.distance(&(p - e * 1e3))))
                        .abs()
                            > 1e-8;
                        assert!(near_kink, "{shape:?} {p:?} axis {d}: {fd} vs {}", g[d]);
                    }
                }
            }
        }
    }

    #[test]
    fn eikonal_residual_of_sphere_is_zero() {
        let s = AnalyticSdf::sphere(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let p = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let n: f64 = s.gradient(&p).norm();
            assert!((n - 1.0).powi(2) < 1e-24);
        }
    }

    #[test]
    fn texture_stays_in_unit_range() {
        let t = Texture::waves();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            for c in t.albedo(&p) {
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn shape_serializes_with_kind_tag() {
        let json = serde_json::to_string(&AnalyticSdf::sphere(0.5)).unwrap();
        assert!(json.contains("\"kind\":\"sphere\""));
        let back: AnalyticSdf = serde_json::from_str(&json).unwrap();
        assert_eq!(back, AnalyticSdf::sphere(0.5));
    }
}
