//! Scalar abstraction shared by plain `f64` code and taped [`Var`]s, plus the
//! small fixed-size vector and matrix types built on it.

use std::fmt::Debug;
use std::ops::{Add, Div, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `log(sigmoid(x))`, stable for large |x|.
    fn log_sigmoid(self) -> Self;
    fn sigmoid(self) -> Self;
    /// The Rodrigues coefficients `sinθ/θ`, `(1−cosθ)/θ²`, `(θ−sinθ)/θ³`
    /// as smooth functions of `θ²`.
    fn rodrigues(self) -> [Self; 3];
    fn detach(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    /// `max(self, c)` with the gradient of the selected branch.
    fn max_c(self, c: f64) -> Self {
        if self.value() >= c {
            self
        } else {
            Self::cst(c)
        }
    }

    fn min_c(self, c: f64) -> Self {
        if self.value() <= c {
            self
        } else {
            Self::cst(c)
        }
    }

    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }
}

/// Value and `d/dθ²` of the three Rodrigues coefficients.
pub(crate) fn rodrigues_coefficients(theta2: f64) -> ([f64; 3], [f64; 3]) {
    if theta2 < 0.1 {
        // Alternating series A = Σ(−x)^k/(2k+1)!, B = Σ(−x)^k/(2k+2)!, C = Σ(−x)^k/(2k+3)!.
        let mut val = [0.0; 3];
        let mut der = [0.0; 3];
        let mut fact = [1.0, 2.0, 6.0];
        let mut next = [2.0, 3.0, 4.0];
        let mut pow = 1.0;
        let mut pow_prev = 0.0;
        for k in 0..10 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for c in 0..3 {
                val[c] += sign * pow / fact[c];
                der[c] += sign * k as f64 * pow_prev / fact[c];
                fact[c] *= next[c] * (next[c] + 1.0);
                next[c] += 2.0;
            }
            pow_prev = pow;
            pow *= theta2;
        }
        (val, der)
    } else {
        let t = theta2.sqrt();
        let (s, c) = t.sin_cos();
        let a = s / t;
        let b = (1.0 - c) / theta2;
        let cc = (t - s) / (theta2 * t);
        let da = (t * c - s) / (2.0 * theta2 * t);
        let db = (t * s - 2.0 * (1.0 - c)) / (2.0 * theta2 * theta2);
        let dc = ((1.0 - c) * t - 3.0 * (t - s)) / (2.0 * theta2 * theta2 * t);
        ([a, b, cc], [da, db, dc])
    }
}

fn log_sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn log_sigmoid(self) -> Self {
        log_sigmoid_f64(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn rodrigues(self) -> [Self; 3] {
        rodrigues_coefficients(self).0
    }
    fn detach(self) -> Self {
        self
    }
}

impl<'t> Real for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(self) -> f64 {
        Var::value(self)
    }
    fn sin(self) -> Self {
        let x = self.value();
        self.unary(x.sin(), x.cos())
    }
    fn cos(self) -> Self {
        let x = self.value();
        self.unary(x.cos(), -x.sin())
    }
    fn sqrt(self) -> Self {
        let r = self.value().sqrt();
        self.unary(r, 0.5 / r)
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        let x = self.value();
        self.unary(x.ln(), 1.0 / x)
    }
    fn log_sigmoid(self) -> Self {
        let x = self.value();
        self.unary(log_sigmoid_f64(x), sigmoid_f64(-x))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value());
        self.unary(s, s * (1.0 - s))
    }
    fn rodrigues(self) -> [Self; 3] {
        let (v, d) = rodrigues_coefficients(self.value());
        [
            self.unary(v[0], d[0]),
            self.unary(v[1], d[1]),
            self.unary(v[2], d[2]),
        ]
    }
    fn detach(self) -> Self {
        Var::detach(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
}

impl<T: Real> Vec3<T> {
    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_f64(v: Vec3<f64>) -> Self {
        Self::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
    }

    pub fn value(&self) -> Vec3<f64> {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }

    pub fn detach(&self) -> Self {
        Self::new(self.x.detach(), self.y.detach(), self.z.detach())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalize(&self) -> Self {
        *self / self.norm()
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Vec3<U> {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Vec3<f64> {
    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<f64> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T = f64> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let o = T::cst(1.0);
        let z = T::zero();
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_f64(a: &Mat3<f64>) -> Self {
        Self {
            m: a.m.map(|r| r.map(T::cst)),
        }
    }

    pub fn value(&self) -> Mat3<f64> {
        Mat3 {
            m: self.m.map(|r| r.map(|v| v.value())),
        }
    }

    /// Skew-symmetric cross-product matrix `[w]×`.
    pub fn skew(w: &Vec3<T>) -> Self {
        let z = T::zero();
        Self {
            m: [[z, -w.z, w.y], [w.z, z, -w.x], [-w.y, w.x, z]],
        }
    }

    pub fn outer(a: &Vec3<T>, b: &Vec3<T>) -> Self {
        let a = a.to_array();
        let b = b.to_array();
        Self {
            m: std::array::from_fn(|i| std::array::from_fn(|j| a[i] * b[j])),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[j][i])),
        }
    }

    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let r = |i: usize| self.m[i][0] * v.x + self.m[i][1] * v.y + self.m[i][2] * v.z;
        Vec3::new(r(0), r(1), r(2))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        Self {
            m: std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j]
                })
            }),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[i][j] + o.m[i][j])),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[i][j] - o.m[i][j])),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            m: self.m.map(|r| r.map(|v| v * s)),
        }
    }
}

impl Mat3<f64> {
    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `‖MᵀM − I‖∞`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul_mat(self);
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((p.m[i][j] - target).abs());
            }
        }
        e
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        e
    }

    pub fn to_nalgebra(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_fn(|i, j| self.m[i][j])
    }

    pub fn from_nalgebra(m: &nalgebra::Matrix3<f64>) -> Self {
        Self {
            m: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])),
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        self.to_nalgebra().try_inverse().map(|m| Self::from_nalgebra(&m))
    }

    /// Geodesic angle (radians) of a rotation matrix.
    pub fn rotation_angle(&self) -> f64 {
        let tr = self.m[0][0] + self.m[1][1] + self.m[2][2];
        // Stable near 0 and π: atan2(‖vee(R−Rᵀ)‖/2, (tr−1)/2).
        let s = Vec3::new(
            self.m[2][1] - self.m[1][2],
            self.m[0][2] - self.m[2][0],
            self.m[1][0] - self.m[0][1],
        )
        .norm()
            * 0.5;
        s.atan2((tr - 1.0) * 0.5)
    }
}
