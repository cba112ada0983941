use super::{yaw_of, yaw_rotation, Mat3, PointCloud3D, RigidTransform, Vec3};
use crate::autodiff::Real;
use crate::error::{Error, Result};

pub const CORNER_COUNT: usize = 8;

/// Oriented 3D box. `dims = (w, h, l)` are the extents along the box x, y
/// and z axes; `rotation` maps box axes into the enclosing frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox3D<R = f64> {
    pub center: Vec3<R>,
    pub dims: Vec3<R>,
    pub rotation: Mat3<R>,
}

impl<R: Real> OrientedBox3D<R> {
    pub fn new(center: Vec3<R>, dims: Vec3<R>, rotation: Mat3<R>) -> Self {
        Self { center, dims, rotation }
    }

    pub fn from_f64(b: &OrientedBox3D<f64>) -> Self {
        Self {
            center: Vec3::from_f64(b.center),
            dims: Vec3::from_f64(b.dims),
            rotation: Mat3::from_f64(b.rotation),
        }
    }

    /// Gravity-aligned box from center, `(w, h, l)` and heading.
    pub fn from_yaw(center: Vec3<R>, dims: Vec3<R>, yaw: R) -> Self {
        Self { center, dims, rotation: yaw_rotation(yaw) }
    }

    pub fn volume(&self) -> R {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn corners(&self) -> [Vec3<R>; CORNER_COUNT] {
        box_corners(self)
    }

    /// The box expressed in the frame that `t` maps into.
    pub fn transformed(&self, t: &RigidTransform<R>) -> Self {
        Self {
            center: t.apply(self.center),
            dims: self.dims,
            rotation: t.rotation.mul_mat(&self.rotation),
        }
    }
}

impl OrientedBox3D<f64> {
    pub fn axis_aligned(center: Vec3<f64>, dims: Vec3<f64>) -> Self {
        Self { center, dims, rotation: Mat3::identity() }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if !(d.x >= 0.0 && d.y >= 0.0 && d.z >= 0.0) || !self.center.is_finite() {
            return Err(Error::InvalidInput(format!("invalid box dims/center {self:?}")));
        }
        if self.rotation.orthonormality_error() > 1e-9 {
            return Err(Error::InvalidInput("box rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.dims.x <= 0.0 || self.dims.y <= 0.0 || self.dims.z <= 0.0
    }

    /// Heading, when the rotation is a pure yaw within 1e-6.
    pub fn yaw(&self) -> Option<f64> {
        yaw_of(&self.rotation, 1e-6)
    }

    /// Coordinates of `p` in the box frame, relative to the center.
    pub fn to_local(&self, p: Vec3<f64>) -> Vec3<f64> {
        self.rotation.transpose().mul_vec(p - self.center)
    }

    pub fn contains(&self, p: Vec3<f64>, tol: f64) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.dims.x / 2.0 + tol
            && q.y.abs() <= self.dims.y / 2.0 + tol
            && q.z.abs() <= self.dims.z / 2.0 + tol
    }

    /// Same box with every extent grown by `2·margin`.
    pub fn dilated(&self, margin: f64) -> Self {
        let m = 2.0 * margin;
        Self { dims: Vec3::new(self.dims.x + m, self.dims.y + m, self.dims.z + m), ..*self }
    }
}

/// Corners in canonical order: bit 0, 1, 2 of the index select the sign of
/// the x, y, z half-extent (clear → negative, set → positive) in the box
/// frame, before rotation and translation.
pub fn box_corners<R: Real>(b: &OrientedBox3D<R>) -> [Vec3<R>; CORNER_COUNT] {
    let half = b.dims.scale(R::cst(0.5));
    std::array::from_fn(|idx| {
        let pick = |bit: usize, h: R| if idx >> bit & 1 == 1 { h } else { -h };
        let local = Vec3::new(pick(0, half.x), pick(1, half.y), pick(2, half.z));
        b.rotation.mul_vec(local) + b.center
    })
}

/// Smallest box with orientation `rotation` containing every point.
pub fn tight_fitting_box(points: &PointCloud3D, rotation: &Mat3<f64>) -> Result<OrientedBox3D<f64>> {
    let first = points.points.first().ok_or(Error::EmptySet)?;
    let rt = rotation.transpose();
    let q0 = rt.mul_vec(*first);
    let (mut lo, mut hi) = (q0.to_array(), q0.to_array());
    for p in &points.points[1..] {
        let q = rt.mul_vec(*p).to_array();
        for a in 0..3 {
            lo[a] = lo[a].min(q[a]);
            hi[a] = hi[a].max(q[a]);
        }
    }
    let mid = Vec3::new((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0);
    Ok(OrientedBox3D {
        center: rotation.mul_vec(mid),
        dims: Vec3::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]),
        rotation: *rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> OrientedBox3D {
        OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0))
    }

    fn sorted(c: &[Vec3<f64>]) -> Vec<[i64; 3]> {
        let mut v: Vec<[i64; 3]> =
            c.iter().map(|p| [(p.x * 1e9).round() as i64, (p.y * 1e9).round() as i64, (p.z * 1e9).round() as i64]).collect();
        v.sort();
        v
    }

    #[test]
    fn unit_cube_corners() {
        let c = unit().corners();
        assert_eq!(c[0], Vec3::new(-0.5, -0.5, -0.5));
        assert_eq!(c[1], Vec3::new(0.5, -0.5, -0.5));
        assert_eq!(c[2], Vec3::new(-0.5, 0.5, -0.5));
        assert_eq!(c[7], Vec3::new(0.5, 0.5, 0.5));
        for p in c {
            assert_eq!((p.x.abs(), p.y.abs(), p.z.abs()), (0.5, 0.5, 0.5));
        }
    }

    #[test]
    fn yaw_pi_keeps_corner_set() {
        let b = OrientedBox3D::from_yaw(Vec3::zeros(), Vec3::new(2.0, 1.0, 2.0), std::f64::consts::PI);
        let a = OrientedBox3D::from_yaw(Vec3::zeros(), Vec3::new(2.0, 1.0, 2.0), 0.0);
        assert_eq!(sorted(&a.corners()), sorted(&b.corners()));
    }

    #[test]
    fn translation_shifts_corners() {
        let t = Vec3::new(1.0, 2.0, 3.0);
        let b = OrientedBox3D::axis_aligned(t, Vec3::new(1.0, 1.0, 1.0));
        for (p, q) in unit().corners().iter().zip(b.corners()) {
            assert_eq!(*p + t, q);
        }
    }

    #[test]
    fn transform_box_matches_transformed_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let r = Mat3::rot_z(rng.random_range(-3.0..3.0)) * Mat3::rot_y(rng.random_range(-3.0..3.0)) * Mat3::rot_x(rng.random_range(-3.0..3.0));
            let t = RigidTransform::new(r, Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
            let b = OrientedBox3D::new(
                Vec3::new(rng.random_range(-2.0..2.0), 0.3, -1.0),
                Vec3::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)),
                Mat3::rot_x(rng.random_range(-3.0..3.0)),
            );
            let moved = b.transformed(&t);
            for (c, m) in b.corners().iter().zip(moved.corners()) {
                assert!(t.apply(*c).max_abs_diff(m) < 1e-9);
            }
        }
        let b = unit();
        assert_eq!(b.transformed(&RigidTransform::identity()), b);
        let shifted = b.transformed(&RigidTransform::from_translation(Vec3::new(0.0, 1.0, 0.0)));
        assert_eq!(shifted.center, Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(shifted.rotation, b.rotation);
    }

    #[test]
    fn tight_fit_recovers_box_from_corners() {
        let b = OrientedBox3D::from_yaw(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 1.5, 2.5), 0.8);
        let fit = tight_fitting_box(&PointCloud3D::new(b.corners().to_vec()), &b.rotation).unwrap();
        assert!(fit.center.max_abs_diff(b.center) < 1e-12);
        assert!(fit.dims.max_abs_diff(b.dims) < 1e-12);
    }

    #[test]
    fn tight_fit_single_point_and_empty() {
        let p = Vec3::new(0.1, 0.2, 0.3);
        let fit = tight_fitting_box(&PointCloud3D::new(vec![p]), &Mat3::identity()).unwrap();
        assert_eq!(fit.center, p);
        assert_eq!(fit.dims, Vec3::zeros());
        assert!(fit.is_degenerate());
        assert!(matches!(tight_fitting_box(&PointCloud3D::default(), &Mat3::identity()), Err(Error::EmptySet)));
    }

    #[test]
    fn tight_fit_random_points_contained_and_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = OrientedBox3D::from_yaw(Vec3::new(-1.0, 0.5, 4.0), Vec3::new(1.0, 2.0, 0.7), -0.4);
        let pts: Vec<Vec3<f64>> = (0..1000)
            .map(|_| {
                let l = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0), rng.random_range(-0.35..0.35));
                truth.rotation.mul_vec(l) + truth.center
            })
            .collect();
        let cloud = PointCloud3D::new(pts);
        let fit = tight_fitting_box(&cloud, &truth.rotation).unwrap();
        assert!(fit.dims.x <= truth.dims.x && fit.dims.y <= truth.dims.y && fit.dims.z <= truth.dims.z);
        assert!(cloud.points.iter().all(|p| fit.contains(*p, 1e-9)));
        // shrinking any extent by 1e-5 loses containment
        for axis in 0..3 {
            let mut d = fit.dims.to_array();
            d[axis] -= 1e-5;
            let smaller = OrientedBox3D { dims: Vec3::from_array(d), ..fit };
            assert!(!cloud.points.iter().all(|p| smaller.contains(*p, 0.0)));
        }
    }
}
