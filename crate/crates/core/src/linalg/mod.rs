//! Sparse and dense linear algebra used by the assembly and solver layers.

pub mod dense;
pub mod skyline;
pub mod sparse;

pub use dense::{DenseLu, DenseMatrix};
pub use skyline::{factor_and_solve, Factorization, SkylineLdlt, SkylineLu};
pub use sparse::SparseOperator;

use crate::scalar::Scalar;

pub fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
