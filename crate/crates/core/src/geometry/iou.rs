//! Exact intersection-over-union of oriented boxes.
//!
//! The intersection of two boxes is computed by clipping the faces of one
//! box against the six half-spaces of the other (Sutherland–Hodgman per
//! face, plus a cap polygon on every cutting plane) and integrating the
//! resulting convex polytope as a sum of pyramids. The code is generic over
//! [`Real`] so the same path yields IoU gradients.

use super::{OrientedBox3D, Vec3};
use crate::autodiff::Real;

/// Axis-aligned image rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rect<R = f64> {
    pub x0: R,
    pub y0: R,
    pub x1: R,
    pub y1: R,
}

impl<R: Real> Rect<R> {
    pub fn new(x0: R, y0: R, x1: R, y1: R) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> R {
        let w = (self.x1 - self.x0).max(R::zero());
        let h = (self.y1 - self.y0).max(R::zero());
        w * h
    }

    /// Bounding rectangle of a non-empty point list.
    pub fn bounding(points: &[(R, R)]) -> Self {
        let (mut x0, mut y0) = points[0];
        let (mut x1, mut y1) = points[0];
        for &(x, y) in &points[1..] {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Self { x0, y0, x1, y1 }
    }
}

/// Rectangle IoU; 0 when the union is empty.
pub fn iou2d<R: Real>(a: &Rect<R>, b: &Rect<R>) -> R {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(R::zero());
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(R::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union.value() <= 0.0 {
        return R::zero();
    }
    inter / union
}

/// Exact 3D IoU of two oriented boxes. Degenerate boxes give 0.
pub fn iou3d(a: &OrientedBox3D<f64>, b: &OrientedBox3D<f64>) -> f64 {
    iou3d_generic(a, b)
}

pub fn iou3d_generic<R: Real>(a: &OrientedBox3D<R>, b: &OrientedBox3D<R>) -> R {
    let (va, vb) = (a.volume(), b.volume());
    if va.value() <= 0.0 || vb.value() <= 0.0 {
        return R::zero();
    }
    if a.values_eq(b) {
        // IoU peaks at identity; use the zero subgradient and flag the kink.
        for (x, y) in a.params().iter().zip(b.params()) {
            (*x - y).kink();
        }
        return R::one();
    }
    // averaging both clip directions makes the result exactly symmetric
    let inter = R::cst(0.5) * (intersection_volume(a, b) + intersection_volume(b, a));
    let union = va + vb - inter;
    let iou = inter / union;
    if iou.value() < 0.0 {
        R::zero()
    } else if iou.value() > 1.0 {
        R::one()
    } else {
        iou
    }
}

impl<R: Real> OrientedBox3D<R> {
    fn params(&self) -> [R; 15] {
        let m = &self.rotation.m;
        [
            self.center.x, self.center.y, self.center.z, self.dims.x, self.dims.y, self.dims.z, m[0][0], m[0][1], m[0][2],
            m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    fn values_eq(&self, o: &Self) -> bool {
        self.params().iter().zip(o.params()).all(|(x, y)| x.value() == y.value())
    }
}

/// Outward faces of a box as corner index quads.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // -x
    [1, 5, 7, 3], // +x
    [0, 4, 5, 1], // -y
    [2, 3, 7, 6], // +y
    [0, 1, 3, 2], // -z
    [4, 6, 7, 5], // +z
];

type Polygon<R> = Vec<Vec3<R>>;

/// Volume of `clip ∩ subject` obtained by clipping `subject`'s faces.
pub(crate) fn intersection_volume<R: Real>(subject: &OrientedBox3D<R>, clip: &OrientedBox3D<R>) -> R {
    let corners = subject.corners();
    let mut faces: Vec<Polygon<R>> = FACES.iter().map(|f| f.iter().map(|&i| corners[i]).collect()).collect();
    let scale = 1.0 + subject.dims.values().x.max(subject.dims.values().y).max(subject.dims.values().z);
    let merge_tol = 1e-10 * scale;

    for axis in 0..3 {
        let n_axis = clip.rotation.col(axis);
        let half = clip.dims[axis] * R::cst(0.5);
        // in-plane basis for ordering cap vertices
        let (u, v) = (clip.rotation.col((axis + 1) % 3), clip.rotation.col((axis + 2) % 3));
        for sign in [1.0, -1.0] {
            let n = n_axis.scale(R::cst(sign));
            let signed = |p: Vec3<R>| n.dot(p - clip.center) - half;
            let mut cap: Vec<Vec3<R>> = Vec::new();
            let mut next_faces = Vec::with_capacity(faces.len() + 1);
            // a face already lying in the cutting plane closes the polytope
            let mut on_plane = false;
            for face in &faces {
                let (clipped, coplanar) = clip_polygon(face, &signed, &mut cap);
                if clipped.len() >= 3 {
                    on_plane |= coplanar;
                    next_faces.push(clipped);
                }
            }
            let cap = order_cap(dedup(cap, merge_tol), u, v);
            if cap.len() >= 3 && !on_plane {
                next_faces.push(cap);
            }
            faces = next_faces;
            if faces.is_empty() {
                return R::zero();
            }
        }
    }
    polytope_volume(&faces)
}

/// Clips one face; returns the kept polygon and whether the face lies in
/// the cutting plane.
fn clip_polygon<R: Real>(poly: &[Vec3<R>], signed: &impl Fn(Vec3<R>) -> R, cap: &mut Vec<Vec3<R>>) -> (Polygon<R>, bool) {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let dist: Vec<R> = poly.iter().map(|p| signed(*p)).collect();
    let coplanar = dist.iter().all(|d| d.value() == 0.0);
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let (dp, dq) = (dist[k], dist[(k + 1) % poly.len()]);
        dp.kink();
        let (vp, vq) = (dp.value(), dq.value());
        if vp <= 0.0 {
            out.push(p);
            if vp == 0.0 {
                cap.push(p);
            }
        }
        if (vp < 0.0 && vq > 0.0) || (vp > 0.0 && vq < 0.0) {
            let t = dp / (dp - dq);
            let x = p + (q - p).scale(t);
            out.push(x);
            cap.push(x);
        }
    }
    (out, coplanar)
}

fn dedup<R: Real>(points: Vec<Vec3<R>>, tol: f64) -> Vec<Vec3<R>> {
    let mut kept: Vec<Vec3<R>> = Vec::with_capacity(points.len() / 2 + 1);
    for p in points {
        let pv = p.values();
        if !kept.iter().any(|k| k.values().max_abs_diff(pv) <= tol) {
            kept.push(p);
        }
    }
    kept
}

fn order_cap<R: Real>(mut pts: Vec<Vec3<R>>, u: Vec3<R>, v: Vec3<R>) -> Vec<Vec3<R>> {
    if pts.len() < 3 {
        return pts;
    }
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec3::<f64>::zeros(), |acc, p| acc + p.values()).scale(1.0 / n);
    let (u, v) = (u.values(), v.values());
    let angle = |p: &Vec3<R>| {
        let d = p.values() - c;
        d.dot(v).atan2(d.dot(u))
    };
    pts.sort_by(|a, b| angle(a).total_cmp(&angle(b)));
    pts
}

/// Volume of a closed convex polytope given by planar convex faces.
fn polytope_volume<R: Real>(faces: &[Polygon<R>]) -> R {
    let count: usize = faces.iter().map(|f| f.len()).sum();
    let mut reference = Vec3::<R>::zeros();
    for f in faces {
        for p in f {
            reference = reference + *p;
        }
    }
    let reference = reference.scale(R::cst(1.0 / count as f64));
    let mut total = R::zero();
    for f in faces {
        let a = f[0] - reference;
        let mut face = R::zero();
        for k in 1..f.len() - 1 {
            face += a.dot((f[k] - reference).cross(f[k + 1] - reference));
        }
        total += face.abs();
    }
    total / R::cst(6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;

    fn cube(c: Vec3<f64>) -> OrientedBox3D {
        OrientedBox3D::axis_aligned(c, Vec3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn identical_and_disjoint() {
        let a = OrientedBox3D::new(Vec3::new(0.3, 1.0, 4.0), Vec3::new(1.0, 2.0, 0.5), Mat3::rot_x(0.3) * Mat3::rot_y(1.0));
        assert_eq!(iou3d(&a, &a), 1.0);
        assert_eq!(iou3d(&cube(Vec3::zeros()), &cube(Vec3::new(10.0, 0.0, 0.0))), 0.0);
    }

    #[test]
    fn half_offset_cubes() {
        let iou = iou3d(&cube(Vec3::zeros()), &cube(Vec3::new(0.5, 0.0, 0.0)));
        assert!((iou - 1.0 / 3.0).abs() < 1e-12, "{iou}");
    }

    #[test]
    fn nested_boxes() {
        let big = OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(2.0, 2.0, 2.0));
        let small = OrientedBox3D::new(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5), Mat3::rot_z(0.7));
        assert!((iou3d(&big, &small) - 0.125 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_prism_has_known_overlap() {
        // unit cube vs same cube rotated 45° about z: overlap is the regular
        // octagon of area 2(√2 − 1) extruded by 1
        let a = cube(Vec3::zeros());
        let b = OrientedBox3D::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), Mat3::rot_z(std::f64::consts::FRAC_PI_4));
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((iou3d(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_gives_zero() {
        let flat = OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0));
        assert_eq!(iou3d(&flat, &flat), 0.0);
        assert_eq!(iou3d(&flat, &cube(Vec3::zeros())), 0.0);
    }

    #[test]
    fn rect_iou() {
        let a = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou2d(&a, &a), 1.0);
        assert_eq!(iou2d(&a, &Rect::new(2.0, 2.0, 3.0, 3.0)), 0.0);
        // overlap 0.5, union 1.5
        assert!((iou2d(&a, &Rect::new(0.5, 0.0, 1.5, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
        let empty = Rect::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(iou2d(&empty, &empty), 0.0);
    }
}
