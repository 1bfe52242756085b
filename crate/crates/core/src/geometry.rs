//! Pinhole cameras, rigid and similarity transforms, rays and the
//! plane-induced homography.
//!
//! Poses are stored world-to-camera: `x_cam = R·x_world + t`. A [`Pose`]
//! keeps its initial transform frozen and carries an optimizable se(3)
//! increment that is applied on the left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{Mat3, Real, Vec3};

/// Minimum camera-frame depth for a point to count as observable.
pub const EPS_DEPTH: f64 = 1e-6;
/// Minimum |d| for a plane not to pass through a camera center.
pub const EPS_PLANE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center.
    pub fn from_fov(fov_x_deg: f64, width: u32, height: u32) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvariantViolation(format!("bad intrinsics {self:?}")))
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_rows([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::from_rows([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])
    }
}

/// World-to-camera rigid transform over any scalar type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid<T = f64> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Rigid<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_f64(r: &Rigid<f64>) -> Self {
        Self {
            rotation: Mat3::from_f64(&r.rotation),
            translation: Vec3::from_f64(r.translation),
        }
    }

    pub fn value(&self) -> Rigid<f64> {
        Rigid {
            rotation: self.rotation.value(),
            translation: self.translation.value(),
        }
    }

    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.mul_vec(&self.translation),
        }
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3<T> {
        -self.rotation.transpose().mul_vec(&self.translation)
    }
}

impl Rigid<f64> {
    /// Camera at `eye` looking at `target`; camera y points down the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows([x.to_array(), y.to_array(), z.to_array()]);
        Self {
            rotation,
            translation: -rotation.mul_vec(&eye),
        }
    }

    /// Row-major 4×4 matrix of this transform.
    pub fn to_matrix4(&self) -> [f64; 16] {
        let r = &self.rotation.m;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1], r[2][2],
            t.z, 0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix4(m: &[f64; 16]) -> Result<Self> {
        let rotation = Mat3::from_rows([[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]);
        let bottom_ok = m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && m[15] == 1.0;
        if !bottom_ok || rotation.orthonormality_error() > 1e-6 || rotation.determinant() < 0.0 {
            return Err(Error::InvariantViolation("pose matrix is not a rigid transform".into()));
        }
        Ok(Self {
            rotation,
            translation: Vec3::new(m[3], m[7], m[11]),
        })
    }
}

/// Exponential map of the twist `(ω, u)`: rotation by Rodrigues' formula,
/// translation through the left Jacobian.
pub fn se3_exp<T: Real>(twist: &[T; 6]) -> Rigid<T> {
    let w = Vec3::new(twist[0], twist[1], twist[2]);
    let u = Vec3::new(twist[3], twist[4], twist[5]);
    let [a, b, c] = w.norm_squared().rodrigues();
    let k = Mat3::skew(&w);
    let k2 = k.mul_mat(&k);
    let id = Mat3::identity();
    let rotation = id.add(&k.scale(a)).add(&k2.scale(b));
    let v = id.add(&k.scale(b)).add(&k2.scale(c));
    Rigid {
        rotation,
        translation: v.mul_vec(&u),
    }
}

/// Rotation vector of a rotation matrix (inverse of the SO(3) exponential).
pub fn so3_log(r: &Mat3) -> Vec3 {
    let angle = r.rotation_angle();
    let v = Vec3::new(r.m[2][1] - r.m[1][2], r.m[0][2] - r.m[2][0], r.m[1][0] - r.m[0][1]);
    if angle < 1e-10 {
        return v * 0.5;
    }
    if angle < std::f64::consts::PI - 1e-6 {
        return v * (angle / (2.0 * angle.sin()));
    }
    // Near π: axis from the largest diagonal entry of (R + I)/2.
    let b = [
        (r.m[0][0] + 1.0) * 0.5,
        (r.m[1][1] + 1.0) * 0.5,
        (r.m[2][2] + 1.0) * 0.5,
    ];
    let i = (0..3).max_by(|&a, &c| b[a].total_cmp(&b[c])).unwrap_or(0);
    let mut axis = [0.0; 3];
    axis[i] = b[i].max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            axis[j] = (r.m[i][j] + r.m[j][i]) * 0.25 / axis[i];
        }
    }
    Vec3::from_array(axis).normalize() * angle
}

/// Camera pose: a frozen initial world-to-camera transform and a
/// left-multiplied se(3) increment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub initial: Rigid,
    pub delta: [f64; 6],
}

impl Pose {
    pub fn new(initial: Rigid) -> Self {
        Self {
            initial,
            delta: [0.0; 6],
        }
    }

    pub fn identity() -> Self {
        Self::new(Rigid::identity())
    }

    /// Effective world-to-camera transform `exp(delta) ∘ initial`.
    pub fn world_to_camera(&self) -> Rigid {
        self.with_delta(&self.delta)
    }

    /// Effective transform for an arbitrary (possibly taped) delta.
    pub fn with_delta<T: Real>(&self, delta: &[T; 6]) -> Rigid<T> {
        se3_exp(delta).compose(&Rigid::from_f64(&self.initial))
    }

    pub fn rotation(&self) -> Mat3 {
        self.world_to_camera().rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.world_to_camera().translation
    }

    pub fn center(&self) -> Vec3 {
        self.world_to_camera().center()
    }

    /// Folds the increment into the initial transform.
    pub fn baked(&self) -> Self {
        Self::new(self.world_to_camera())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T = f64> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Real> Ray<T> {
    pub fn at(&self, t: f64) -> Vec3<T> {
        self.origin + self.direction * t
    }

    pub fn value(&self) -> Ray<f64> {
        Ray {
            origin: self.origin.value(),
            direction: self.direction.value(),
        }
    }
}

impl Ray<f64> {
    /// Parametric range where the ray is inside a centered sphere.
    pub fn sphere_range(&self, radius: f64) -> Option<(f64, f64)> {
        let b = self.origin.dot(&self.direction);
        let c = self.origin.norm_squared() - radius * radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let far = -b + s;
        if far <= 0.0 {
            return None;
        }
        Some(((-b - s).max(0.0), far))
    }
}

/// Tangent-plane patch `nᵀp + d = 0` in the reference camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanePatch<T = f64> {
    pub normal: Vec3<T>,
    pub offset: T,
    pub center_pixel: [f64; 2],
    pub half_extent: u32,
}

impl<T: Real> PlanePatch<T> {
    /// Plane through camera-frame point `p` with unit normal `n`.
    pub fn through(p: Vec3<T>, n: Vec3<T>, center_pixel: [f64; 2], half_extent: u32) -> Self {
        Self {
            offset: -n.dot(&p),
            normal: n,
            center_pixel,
            half_extent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_rigid(r: &Rigid) -> Self {
        Self {
            scale: 1.0,
            rotation: r.rotation,
            translation: r.translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.mul_vec(p) * self.scale + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(&other.translation) * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -rt.mul_vec(&self.translation) * (1.0 / self.scale),
        }
    }

    /// Applies the similarity to a world-to-camera pose, returning the pose
    /// of the same camera in the transformed world frame (translation rescaled).
    pub fn transform_camera(&self, cam: &Rigid) -> Rigid {
        let center = self.apply(&cam.center());
        let rotation = cam.rotation.mul_mat(&self.rotation.transpose());
        Rigid {
            rotation,
            translation: -rotation.mul_vec(&center),
        }
    }
}

/// Pinhole projection of a world point through a world-to-camera transform.
pub fn project_with<T: Real>(point: &Vec3<T>, cam: &Rigid<T>, k: &Intrinsics) -> Result<[T; 2]> {
    let pc = cam.apply(point);
    if pc.z.value() <= EPS_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z.value() });
    }
    Ok([pc.x / pc.z * k.fx + k.cx, pc.y / pc.z * k.fy + k.cy])
}

pub fn project(point: &Vec3, pose: &Pose, k: &Intrinsics) -> Result<[f64; 2]> {
    project_with(point, &pose.world_to_camera(), k)
}

/// Ray through a pixel without bounds checking; direction is unit length.
pub fn pixel_ray<T: Real>(pixel: [f64; 2], cam: &Rigid<T>, k: &Intrinsics) -> Ray<T> {
    let d_cam = Vec3::new((pixel[0] - k.cx) / k.fx, (pixel[1] - k.cy) / k.fy, 1.0);
    let d_cam = d_cam * (1.0 / d_cam.norm());
    let rt = cam.rotation.transpose();
    Ray {
        origin: cam.center(),
        direction: rt.mul_vec(&Vec3::from_f64(d_cam)),
    }
}

pub fn cast_ray(pixel: [f64; 2], pose: &Pose, k: &Intrinsics) -> Result<Ray> {
    if !k.contains(pixel[0], pixel[1]) {
        return Err(Error::OutOfBounds {
            u: pixel[0],
            v: pixel[1],
            width: k.width,
            height: k.height,
        });
    }
    Ok(pixel_ray(pixel, &pose.world_to_camera(), k))
}

/// Relative transform `cam_b ∘ cam_a⁻¹` (frame a to frame b).
fn relative<T: Real>(cam_a: &Rigid<T>, cam_b: &Rigid<T>) -> (Mat3<T>, Vec3<T>) {
    let r = cam_b.rotation.mul_mat(&cam_a.rotation.transpose());
    let t = cam_b.translation - r.mul_vec(&cam_a.translation);
    (r, t)
}

fn check_plane(offset: f64) -> Result<()> {
    if offset.abs() <= EPS_PLANE {
        Err(Error::DegeneratePlane { offset })
    } else {
        Ok(())
    }
}

fn mat_k<T: Real>(k: &Intrinsics) -> Mat3<T> {
    Mat3::from_f64(&k.matrix())
}

fn mat_k_inv<T: Real>(k: &Intrinsics) -> Mat3<T> {
    Mat3::from_f64(&k.inverse_matrix())
}

/// Homography induced by a plane given in the reference (i) camera frame,
/// mapping homogeneous target-image (j) pixels to reference-image pixels.
///
/// The plane is moved into frame j (`n_j = R_rel·n`, `d_j = d − n_jᵀt_rel`) and
/// `H = K_i (R_i R_jᵀ − R_i (R_iᵀ t_i − R_jᵀ t_j) n_jᵀ / d_j) K_j⁻¹`.
pub fn plane_homography<T: Real>(
    cam_i: &Rigid<T>,
    cam_j: &Rigid<T>,
    k_i: &Intrinsics,
    k_j: &Intrinsics,
    normal: &Vec3<T>,
    offset: T,
) -> Result<Mat3<T>> {
    check_plane(offset.value())?;
    let (r_ij, t_ij) = relative(cam_i, cam_j);
    let n_j = r_ij.mul_vec(normal);
    let d_j = offset - n_j.dot(&t_ij);
    check_plane(d_j.value())?;
    let (r_ji, t_ji) = relative(cam_j, cam_i);
    let m = r_ji.sub(&Mat3::outer(&t_ji, &n_j).scale(T::cst(1.0) / d_j));
    Ok(mat_k(k_i).mul_mat(&m).mul_mat(&mat_k_inv(k_j)))
}

/// Inverse direction of [`plane_homography`]: reference pixels to target
/// pixels, `G = K_j (R_rel − t_rel nᵀ/d) K_i⁻¹` with the plane in frame i.
pub fn plane_transfer<T: Real>(
    cam_i: &Rigid<T>,
    cam_j: &Rigid<T>,
    k_i: &Intrinsics,
    k_j: &Intrinsics,
    normal: &Vec3<T>,
    offset: T,
) -> Result<Mat3<T>> {
    check_plane(offset.value())?;
    let (r_ij, t_ij) = relative(cam_i, cam_j);
    let m = r_ij.sub(&Mat3::outer(&t_ij, normal).scale(T::cst(1.0) / offset));
    Ok(mat_k(k_j).mul_mat(&m).mul_mat(&mat_k_inv(k_i)))
}

/// Applies a homography to an inhomogeneous pixel.
pub fn apply_homography<T: Real>(h: &Mat3<T>, u: T, v: T) -> [T; 2] {
    let x = h.m[0][0] * u + h.m[0][1] * v + h.m[0][2];
    let y = h.m[1][0] * u + h.m[1][1] * v + h.m[1][2];
    let w = h.m[2][0] * u + h.m[2][1] * v + h.m[2][2];
    [x / w, y / w]
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// minimizing `Σ‖s·R·src + t − dst‖²`.
fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Sim3> {
    if src.len() != dst.len() {
        return Err(Error::CountMismatch {
            estimated: src.len(),
            ground_truth: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: n });
    }
    let inv_n = 1.0 / n as f64;
    let mean = |pts: &[Vec3]| pts.iter().fold(Vec3::zeros(), |a, p| a + *p) * inv_n;
    let mu_s = mean(src);
    let mu_d = mean(dst);
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    let mut scatter = nalgebra::Matrix3::<f64>::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = *s - mu_s;
        let dc = *d - mu_d;
        let sv = nalgebra::Vector3::new(sc.x, sc.y, sc.z);
        let dv = nalgebra::Vector3::new(dc.x, dc.y, dc.z);
        cov += dv * sv.transpose();
        scatter += sv * sv.transpose();
        var_s += sc.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;
    let eig = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD failed".into())),
    };
    let mut s = nalgebra::Matrix3::<f64>::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_s
    } else {
        1.0
    };
    let rotation = Mat3::from_nalgebra(&r);
    let translation = mu_d - rotation.mul_vec(&mu_s) * scale;
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

pub fn umeyama_align(src: &[Vec3], dst: &[Vec3]) -> Result<Sim3> {
    umeyama(src, dst, true)
}

pub fn rigid_align(src: &[Vec3], dst: &[Vec3]) -> Result<Sim3> {
    umeyama(src, dst, false)
}
