//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self;

    /// Conversion from a count or index.
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Two-component vector (points, gradients, fluxes).
pub type Vec2<T> = [T; 2];

/// Row-major 2x2 matrix.
pub type Mat2<T> = [[T; 2]; 2];

#[inline]
pub fn dot2<T: Scalar>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn mat_vec2<T: Scalar>(m: &Mat2<T>, v: Vec2<T>) -> Vec2<T> {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
pub fn identity2<T: Scalar>() -> Mat2<T> {
    [[T::one(), T::zero()], [T::zero(), T::one()]]
}

#[inline]
pub fn scale2<T: Scalar>(m: &Mat2<T>, s: T) -> Mat2<T> {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix. Only the upper
/// off-diagonal entry is read.
pub fn sym_eigenvalues2<T: Scalar>(m: &Mat2<T>) -> (T, T) {
    let half = T::lit(0.5);
    let mean = half * (m[0][0] + m[1][1]);
    let diff = half * (m[0][0] - m[1][1]);
    let radius = (diff * diff + m[0][1] * m[0][1]).sqrt();
    (mean - radius, mean + radius)
}

/// Spectral norm of a general 2x2 matrix.
pub fn spectral_norm2<T: Scalar>(m: &Mat2<T>) -> T {
    // Largest eigenvalue of m^T m.
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let (_, max) = sym_eigenvalues2(&[[a, b], [b, d]]);
    max.max(T::zero()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        let (lo, hi) = sym_eigenvalues2(&[[3.0_f64, 0.0], [0.0, 1.0]]);
        assert_eq!((lo, hi), (1.0, 3.0));
        let (lo, hi) = sym_eigenvalues2(&[[2.0_f64, 1.0], [1.0, 2.0]]);
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_matches_singular_value() {
        // [[0, 2], [0, 0]] has singular values 2 and 0.
        assert!((spectral_norm2(&[[0.0_f64, 2.0], [0.0, 0.0]]) - 2.0).abs() < 1e-15);
        assert!((spectral_norm2(&[[-1.0_f32, 0.0], [0.0, 0.5]]) - 1.0).abs() < 1e-6);
    }
}
