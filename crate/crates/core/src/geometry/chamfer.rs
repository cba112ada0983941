use super::Vec3;
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Per-pair distance used inside the Chamfer sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferMode {
    /// Euclidean distance, result in meters.
    #[default]
    Euclidean,
    /// Squared Euclidean distance.
    Squared,
}

/// Symmetric Chamfer distance with Euclidean pair distances:
/// `0.5 · (mean_a min_b ‖a−b‖ + mean_b min_a ‖b−a‖)`.
pub fn chamfer(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<f64> {
    chamfer_with(a, b, ChamferMode::Euclidean)
}

pub fn chamfer_with<R: Real>(a: &[Vec3<R>], b: &[Vec3<R>], mode: ChamferMode) -> Result<R> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let dist = |p: Vec3<R>, q: Vec3<R>| match mode {
        ChamferMode::Euclidean => (p - q).norm(),
        ChamferMode::Squared => (p - q).norm_squared(),
    };
    let directed = |from: &[Vec3<R>], to: &[Vec3<R>]| {
        let mut sum = R::zero();
        for &p in from {
            let mut best = dist(p, to[0]);
            for &q in &to[1..] {
                best = best.min(dist(p, q));
            }
            sum += best;
        }
        sum / R::cst(from.len() as f64)
    };
    Ok(R::cst(0.5) * (directed(a, b) + directed(b, a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedBox3D;

    fn brute_directed(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
        a.iter()
            .map(|p| b.iter().map(|q| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let c = OrientedBox3D::from_yaw(Vec3::new(1.0, 0.0, 3.0), Vec3::new(1.0, 2.0, 3.0), 0.3).corners();
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn single_pair() {
        assert_eq!(chamfer(&[Vec3::zeros()], &[Vec3::new(3.0, 4.0, 0.0)]).unwrap(), 5.0);
        assert_eq!(chamfer_with(&[Vec3::<f64>::zeros()], &[Vec3::new(3.0, 4.0, 0.0)], ChamferMode::Squared).unwrap(), 25.0);
    }

    #[test]
    fn translated_well_separated_set() {
        let a = OrientedBox3D::from_yaw(Vec3::zeros(), Vec3::new(2.0, 2.0, 2.0), 0.0).corners();
        let t = Vec3::new(0.1, -0.2, 0.05);
        let b: Vec<_> = a.iter().map(|p| *p + t).collect();
        let oracle = 0.5 * (brute_directed(&a, &b) + brute_directed(&b, &a));
        let d = chamfer(&a, &b).unwrap();
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - t.norm()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_errors() {
        let a = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        let b = [Vec3::new(0.0, 2.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        assert!(matches!(chamfer(&a, &[]), Err(Error::EmptySet)));
    }
}
