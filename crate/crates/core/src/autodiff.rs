//! Forward-mode differentiation.
//!
//! Geometry, losses and the decoder are written once against the [`Real`]
//! trait. Instantiated with `f64` they compute values; instantiated with
//! [`Dual`] they carry partial derivatives along the exact same code path.
//! Gradients over arbitrarily many parameters are obtained by seeding the
//! parameters in chunks of [`CHUNK`] directions ([`gradient`]).
//!
//! Operations that are not differentiable everywhere (absolute values,
//! nearest-neighbour selection, clipping sign tests, ties in soft weights)
//! report a signed *margin* through [`Real::kink`]. While a
//! [`KinkRecorder`] is active, every dual-valued margin is turned into a
//! first-order estimate of the distance, per parameter, to the nearest
//! non-smooth point. The gradient checker uses it to flag rather than fail
//! parameters that sit on a kink.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of directional derivatives carried per dual evaluation.
pub const CHUNK: usize = 8;

/// Scalar abstraction shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + Debug
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Smooth except at zero. Records a kink at zero.
    fn abs(self) -> Self;
    /// Record that the evaluated function is non-smooth where `self == 0`.
    fn kink(self) {}

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn powi(self, n: i32) -> Self {
        let mut acc = Self::one();
        let base = if n < 0 { Self::one() / self } else { self };
        for _ in 0..n.unsigned_abs() {
            acc *= base;
        }
        acc
    }
    /// Selects by value; ties pick `self`. Records a kink at the tie.
    fn max(self, other: Self) -> Self {
        (self - other).kink();
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
    /// Selects by value; ties pick `self`. Records a kink at the tie.
    fn min(self, other: Self) -> Self {
        (self - other).kink();
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }
    /// `ln(1 + e^x)`, evaluated without overflow.
    fn softplus(self) -> Self {
        let v = self.value();
        if v > 30.0 {
            self + (-self).exp()
        } else if v < -30.0 {
            self.exp()
        } else {
            (Self::one() + self.exp()).ln()
        }
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
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
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Dual number with `N` infinitesimal directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Default for Dual<N> {
    fn default() -> Self {
        Self { v: 0.0, d: [0.0; N] }
    }
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// A variable seeded along direction `k`.
    pub fn variable(v: f64, k: usize) -> Self {
        let mut d = [0.0; N];
        d[k] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for (k, x) in d.iter_mut().enumerate() {
            *x = self.d[k] * rhs.v + self.v * rhs.d[k];
        }
        Self { v: self.v * rhs.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for (k, x) in d.iter_mut().enumerate() {
            *x = (self.d[k] - v * rhs.d[k]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for x in self.d.iter_mut() {
            *x = -*x;
        }
        self
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl<const N: usize> $tr for Dual<N> {
            #[inline]
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let v = self.v.sqrt();
        if v == 0.0 {
            // subgradient convention at the origin
            self.kink();
            return Self::constant(0.0);
        }
        self.chain(v, 0.5 / v)
    }
    fn exp(self) -> Self {
        let v = self.v.exp();
        self.chain(v, v)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn abs(self) -> Self {
        self.kink();
        if self.v >= 0.0 {
            self
        } else {
            -self
        }
    }
    fn kink(self) {
        KINKS.with(|k| {
            if let Some(rec) = k.borrow_mut().as_mut() {
                rec.observe(self.v, &self.d);
            }
        });
    }
}

struct KinkState {
    offset: usize,
    /// Per parameter: smallest estimated distance to a non-smooth point.
    distance: Vec<f64>,
}

impl KinkState {
    fn observe(&mut self, margin: f64, slope: &[f64]) {
        for (k, s) in slope.iter().enumerate() {
            let j = self.offset + k;
            if j >= self.distance.len() || *s == 0.0 {
                continue;
            }
            let dist = margin.abs() / s.abs();
            if dist < self.distance[j] {
                self.distance[j] = dist;
            }
        }
    }
}

thread_local! {
    static KINKS: RefCell<Option<KinkState>> = const { RefCell::new(None) };
}

/// Scope guard collecting kink distances for dual evaluations on this thread.
pub struct KinkRecorder {
    _private: (),
}

impl KinkRecorder {
    pub fn start(n_params: usize) -> Self {
        KINKS.with(|k| {
            *k.borrow_mut() = Some(KinkState {
                offset: 0,
                distance: vec![f64::INFINITY; n_params],
            })
        });
        Self { _private: () }
    }

    /// Per-parameter distance estimates gathered so far.
    pub fn finish(self) -> Vec<f64> {
        KINKS.with(|k| k.borrow_mut().take().map(|s| s.distance).unwrap_or_default())
    }
}

impl Drop for KinkRecorder {
    fn drop(&mut self) {
        KINKS.with(|k| *k.borrow_mut() = None);
    }
}

fn set_kink_offset(offset: usize) {
    KINKS.with(|k| {
        if let Some(rec) = k.borrow_mut().as_mut() {
            rec.offset = offset;
        }
    });
}

/// A scalar function of a flat parameter vector, generic over the scalar.
pub trait ScalarFn {
    fn eval<R: Real>(&self, params: &[R]) -> R;
}

/// Value and full gradient of `f` at `x`, by chunked forward mode.
pub fn gradient<F: ScalarFn + ?Sized>(f: &F, x: &[f64]) -> (f64, Vec<f64>) {
    if x.is_empty() {
        return (f.eval::<f64>(&[]), Vec::new());
    }
    let mut grad = vec![0.0; x.len()];
    let mut value = 0.0;
    for start in (0..x.len()).step_by(CHUNK) {
        set_kink_offset(start);
        let seeded: Vec<Dual<CHUNK>> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if j >= start && j < start + CHUNK {
                    Dual::variable(v, j - start)
                } else {
                    Dual::constant(v)
                }
            })
            .collect();
        let out = f.eval(&seeded);
        value = out.v;
        let n = CHUNK.min(x.len() - start);
        grad[start..start + n].copy_from_slice(&out.d[..n]);
    }
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl ScalarFn for Quadratic {
        fn eval<R: Real>(&self, p: &[R]) -> R {
            let mut acc = R::zero();
            for (i, &x) in p.iter().enumerate() {
                acc += R::cst(i as f64 + 1.0) * x * x;
            }
            acc
        }
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let x: Vec<f64> = (0..19).map(|i| 0.1 * i as f64 - 0.7).collect();
        let (v, g) = gradient(&Quadratic, &x);
        let expected: f64 = x.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum();
        assert!((v - expected).abs() < 1e-12);
        for (i, gi) in g.iter().enumerate() {
            assert!((gi - 2.0 * (i as f64 + 1.0) * x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn elementary_derivatives() {
        let x = Dual::<1>::variable(0.7, 0);
        assert!((x.sqrt().d[0] - 0.5 / 0.7f64.sqrt()).abs() < 1e-15);
        assert!((x.exp().d[0] - 0.7f64.exp()).abs() < 1e-15);
        assert!((x.ln().d[0] - 1.0 / 0.7).abs() < 1e-15);
        assert!((x.sin().d[0] - 0.7f64.cos()).abs() < 1e-15);
        assert!((x.softplus().d[0] - 1.0 / (1.0 + (-0.7f64).exp())).abs() < 1e-15);
        assert_eq!(Dual::<1>::variable(0.0, 0).sqrt().d[0], 0.0);
    }

    struct AbsAt;
    impl ScalarFn for AbsAt {
        fn eval<R: Real>(&self, p: &[R]) -> R {
            (p[0] - R::cst(1.0)).abs() + p[1] * p[1]
        }
    }

    #[test]
    fn kink_distance_is_first_order_exact() {
        let rec = KinkRecorder::start(2);
        let _ = gradient(&AbsAt, &[1.25, 3.0]);
        let dist = rec.finish();
        assert!((dist[0] - 0.25).abs() < 1e-12);
        assert!(dist[1].is_infinite());
    }
}
