//! Coordinate frames, pinhole projection, oriented boxes, IoU and Chamfer
//! distance.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame: x right, y down, z forward;
//! * synthetic world frame: z up (see [`crate::scene`]);
//! * an image pixel `(i, j)` is the square centred on the continuous image
//!   coordinate `(u, v) = (i, j)`, so the pixel containing a projection is
//!   `(round(u), round(v))`.

mod boxes;
mod chamfer;
mod iou;
mod raster;

pub use boxes::{box_corners, tight_fitting_box, OrientedBox3D, CORNER_COUNT};
pub use chamfer::{chamfer, chamfer_with, ChamferMode};
pub use iou::{iou2d, iou3d, iou3d_generic, Rect};
pub use raster::{DepthMap, Mask2D, PointCloud3D, NO_HIT};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use std::ops::{Add, Index, Mul, Neg, Sub};

/// 3-vector over any [`Real`] scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<R = f64> {
    pub x: R,
    pub y: R,
    pub z: R,
}

impl<R: Real> Vec3<R> {
    pub const fn new(x: R, y: R, z: R) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(R::zero(), R::zero(), R::zero())
    }

    pub fn from_f64(v: Vec3<f64>) -> Self {
        Self::new(R::cst(v.x), R::cst(v.y), R::cst(v.z))
    }

    pub fn from_array(a: [R; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [R; 3] {
        [self.x, self.y, self.z]
    }

    pub fn values(self) -> Vec3<f64> {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }

    pub fn dot(self, o: Self) -> R {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(self, s: R) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm_squared(self) -> R {
        self.dot(self)
    }

    /// Euclidean norm. At the origin the subgradient 0 is used and each
    /// component is reported as a kink.
    pub fn norm(self) -> R {
        let s = self.norm_squared();
        if s.value() == 0.0 {
            self.x.kink();
            self.y.kink();
            self.z.kink();
        }
        s.sqrt()
    }
}

impl Vec3<f64> {
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs_diff(self, o: Self) -> f64 {
        (self.x - o.x).abs().max((self.y - o.y).abs()).max((self.z - o.z).abs())
    }
}

impl<R: Real> Add for Vec3<R> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<R: Real> Sub for Vec3<R> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<R: Real> Neg for Vec3<R> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<R: Real> Index<usize> for Vec3<R> {
    type Output = R;
    fn index(&self, i: usize) -> &R {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3<R = f64> {
    pub m: [[R; 3]; 3],
}

impl<R: Real> Mat3<R> {
    pub fn identity() -> Self {
        let (o, z) = (R::one(), R::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_rows(m: [[R; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_cols(a: Vec3<R>, b: Vec3<R>, c: Vec3<R>) -> Self {
        Self { m: [[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]] }
    }

    pub fn from_f64(o: Mat3<f64>) -> Self {
        let mut m = [[R::zero(); 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = R::cst(o.m[r][c]);
            }
        }
        Self { m }
    }

    pub fn values(&self) -> Mat3<f64> {
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = self.m[r][c].value();
            }
        }
        Mat3 { m }
    }

    pub fn col(&self, c: usize) -> Vec3<R> {
        Vec3::new(self.m[0][c], self.m[1][c], self.m[2][c])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]],
        }
    }

    pub fn mul_vec(&self, v: Vec3<R>) -> Vec3<R> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut m = [[R::zero(); 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = self.m[r][0] * o.m[0][c] + self.m[r][1] * o.m[1][c] + self.m[r][2] * o.m[2][c];
            }
        }
        Self { m }
    }

    pub fn determinant(&self) -> R {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Rotation about the x axis.
    pub fn rot_x(a: R) -> Self {
        let (s, c, o, z) = (a.sin(), a.cos(), R::one(), R::zero());
        Self { m: [[o, z, z], [z, c, -s], [z, s, c]] }
    }

    /// Rotation about the y axis.
    pub fn rot_y(a: R) -> Self {
        let (s, c, o, z) = (a.sin(), a.cos(), R::one(), R::zero());
        Self { m: [[c, z, s], [z, o, z], [-s, z, c]] }
    }

    /// Rotation about the z axis.
    pub fn rot_z(a: R) -> Self {
        let (s, c, o, z) = (a.sin(), a.cos(), R::one(), R::zero());
        Self { m: [[c, -s, z], [s, c, z], [z, z, o]] }
    }

    /// Rotation matrix of the (not necessarily normalized) quaternion
    /// `(w, x, y, z)`; the quaternion is normalized first.
    pub fn from_quaternion(q: [R; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        let two = R::cst(2.0);
        let o = R::one();
        Self {
            m: [
                [o - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
                [two * (x * y + w * z), o - two * (x * x + z * z), two * (y * z - w * x)],
                [two * (x * z - w * y), two * (y * z + w * x), o - two * (x * x + y * y)],
            ],
        }
    }
}

impl Mat3<f64> {
    /// Largest absolute entry of `RᵀR − I` and `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.transpose().mul_mat(self);
        let mut err: f64 = (self.determinant() - 1.0).abs();
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                err = err.max((rtr.m[r][c] - target).abs());
            }
        }
        err
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut err: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                err = err.max((self.m[r][c] - o.m[r][c]).abs());
            }
        }
        err
    }

    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.m;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
        };
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        q.map(|x| sign * x / n)
    }
}

impl<R: Real> Mul for Mat3<R> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}

/// Rotation of a gravity-aligned box with heading `yaw`.
///
/// Boxes live in camera-style frames whose y axis is vertical (pointing
/// down), so a pure heading is a rotation about y. The box `h` extent is the
/// vertical one and `w`, `l` are horizontal.
pub fn yaw_rotation<R: Real>(yaw: R) -> Mat3<R> {
    Mat3::rot_y(yaw)
}

/// Heading of `rotation` if it is a pure yaw within `tol`.
pub fn yaw_of(rotation: &Mat3<f64>, tol: f64) -> Option<f64> {
    let yaw = rotation.m[0][2].atan2(rotation.m[0][0]);
    if yaw_rotation(yaw).max_abs_diff(rotation) <= tol {
        Some(yaw)
    } else {
        None
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<R = f64> {
    pub rotation: Mat3<R>,
    pub translation: Vec3<R>,
}

impl<R: Real> Default for RigidTransform<R> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<R: Real> RigidTransform<R> {
    pub fn new(rotation: Mat3<R>, translation: Vec3<R>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3<R>) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    pub fn from_f64(t: &RigidTransform<f64>) -> Self {
        Self { rotation: Mat3::from_f64(t.rotation), translation: Vec3::from_f64(t.translation) }
    }

    pub fn apply(&self, p: Vec3<R>) -> Vec3<R> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -rt.mul_vec(self.translation) }
    }
}

impl RigidTransform<f64> {
    /// Checked constructor enforcing `RᵀR = I`, `det R = 1` within 1e-9.
    pub fn try_new(rotation: Mat3<f64>, translation: Vec3<f64>) -> Result<Self> {
        if rotation.orthonormality_error() > 1e-9 {
            return Err(Error::InvalidInput("rotation is not orthonormal".into()));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Row-major `[R | t]`, 12 numbers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let (r, t) = (&self.rotation.m, self.translation);
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1], r[2][2], t.z,
        ]
    }

    pub fn from_row_major(a: &[f64; 12]) -> Self {
        Self {
            rotation: Mat3::from_rows([[a[0], a[1], a[2]], [a[4], a[5], a[6]], [a[8], a[9], a[10]]]),
            translation: Vec3::new(a[3], a[7], a[11]),
        }
    }
}

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 110.0, fy: 110.0, cx: 64.0, cy: 64.0, width: 128, height: 128 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Pixel index containing continuous image coordinate `(u, v)`, if inside.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        let (i, j) = (u.round(), v.round());
        if i >= 0.0 && j >= 0.0 && i < self.width as f64 && j < self.height as f64 {
            Some((i as u32, j as u32))
        } else {
            None
        }
    }

    /// Camera-frame ray direction through pixel `(i, j)`, with unit z.
    pub fn ray(&self, i: u32, j: u32) -> Vec3<f64> {
        Vec3::new((i as f64 - self.cx) / self.fx, (j as f64 - self.cy) / self.fy, 1.0)
    }

    /// Vertical field of view in radians.
    pub fn vertical_fov(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy)).atan()
    }
}

/// Projects a camera-frame point. Returns `(u, v, depth)`.
pub fn project(p: Vec3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    if p.z <= 0.0 {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

/// Generic projection used by differentiable losses; no depth check.
pub fn project_generic<R: Real>(p: Vec3<R>, k: &CameraIntrinsics) -> (R, R) {
    (R::cst(k.fx) * p.x / p.z + R::cst(k.cx), R::cst(k.fy) * p.y / p.z + R::cst(k.cy))
}

/// Inverse of [`project`].
pub fn backproject(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vec3<f64>> {
    if depth <= 0.0 || depth.is_nan() {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth))
}
