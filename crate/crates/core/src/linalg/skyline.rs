//! Envelope (skyline) direct factorizations.
//!
//! Row `i` of the envelope spans columns `first[i]..i`. Fill-in is confined
//! to the envelope, so for the lexicographically numbered grids used here the
//! cost is `O(n b^2)` with `b` the half bandwidth. No pivoting is performed:
//! `LDL^T` is used for symmetric systems including saddle points whose
//! constraint block is numbered last, `LU` for structurally symmetric
//! nonsymmetric systems that are diagonally dominated by an elliptic part.

use crate::error::{LodError, Result};
use crate::linalg::sparse::SparseOperator;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Envelope {
    first: Vec<usize>,
    ptr: Vec<usize>,
}

impl Envelope {
    fn of<T: Scalar>(a: &SparseOperator<T>) -> Self {
        let n = a.nrows();
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let (cols, _) = a.row(i);
            for &j in cols {
                if j < i {
                    first[i] = first[i].min(j);
                } else if j > i {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        for i in 0..n {
            ptr.push(ptr[i] + (i - first[i]));
        }
        Self { first, ptr }
    }

    #[inline]
    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.ptr[i]..self.ptr[i + 1]
    }
}

fn pivot_tolerance<T: Scalar>(a: &SparseOperator<T>) -> T {
    T::epsilon() * a.max_abs() * T::from_usize_lossy(a.nrows().max(1))
}

fn check_pivot<T: Scalar>(d: T, tol: T, i: usize) -> Result<()> {
    if !d.is_finite() || d.abs() <= tol {
        Err(LodError::SingularMatrix { pivot: i })
    } else {
        Ok(())
    }
}

/// `A = L D L^T` for symmetric `A` (only the lower triangle is read).
#[derive(Debug, Clone)]
pub struct SkylineLdlt<T> {
    env: Envelope,
    lower: Vec<T>,
    diag: Vec<T>,
}

impl<T: Scalar> SkylineLdlt<T> {
    pub fn factor(a: &SparseOperator<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(LodError::DimensionMismatch("LDL^T of a non-square matrix".into()));
        }
        let n = a.nrows();
        let env = Envelope::of(a);
        let tol = pivot_tolerance(a);
        let mut lower = vec![T::zero(); env.ptr[n]];
        let mut diag = vec![T::zero(); n];
        for i in 0..n {
            let fi = env.first[i];
            let ri = env.range(i);
            let (cols, vals) = a.row(i);
            let mut aii = T::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                if j < i {
                    lower[ri.start + j - fi] = v;
                } else if j == i {
                    aii = v;
                }
            }
            // t_j = a_ij - sum_k t_k l_jk, stored in place of row i
            for j in fi..i {
                let fj = env.first[j];
                let k0 = fi.max(fj);
                if k0 < j {
                    let (head, _) = lower.split_at(ri.start);
                    let lj = &head[env.ptr[j] + (k0 - fj)..env.ptr[j] + (j - fj)];
                    let ti = &lower[ri.start + (k0 - fi)..ri.start + (j - fi)];
                    let s: T = ti.iter().zip(lj).map(|(&x, &y)| x * y).sum();
                    lower[ri.start + j - fi] -= s;
                }
            }
            let mut d = aii;
            for j in fi..i {
                let t = lower[ri.start + j - fi];
                let l = t / diag[j];
                d -= t * l;
                lower[ri.start + j - fi] = l;
            }
            check_pivot(d, tol, i)?;
            diag[i] = d;
        }
        Ok(Self { env, lower, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[T] {
        &self.diag
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        for i in 0..n {
            let fi = self.env.first[i];
            let row = &self.lower[self.env.range(i)];
            let s: T = row.iter().zip(&x[fi..i]).map(|(&l, &y)| l * y).sum();
            x[i] -= s;
        }
        for i in 0..n {
            x[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.env.first[i];
            let xi = x[i];
            let row = &self.lower[self.env.range(i)];
            for (k, &l) in row.iter().enumerate() {
                x[fi + k] -= l * xi;
            }
        }
    }
}

/// `A = L U` with unit lower `L`, on the symmetrized envelope of `A`.
#[derive(Debug, Clone)]
pub struct SkylineLu<T> {
    env: Envelope,
    lower: Vec<T>,
    upper: Vec<T>,
    diag: Vec<T>,
}

impl<T: Scalar> SkylineLu<T> {
    pub fn factor(a: &SparseOperator<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(LodError::DimensionMismatch("LU of a non-square matrix".into()));
        }
        let n = a.nrows();
        let env = Envelope::of(a);
        let tol = pivot_tolerance(a);
        let len = env.ptr[n];
        let mut lower = vec![T::zero(); len];
        let mut upper = vec![T::zero(); len];
        let mut diag = vec![T::zero(); n];
        // scatter A: lower part by rows, upper part by columns
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j < i {
                    lower[env.ptr[i] + j - env.first[i]] = v;
                } else if j > i {
                    upper[env.ptr[j] + i - env.first[j]] = v;
                } else {
                    diag[i] = v;
                }
            }
        }
        for i in 0..n {
            let fi = env.first[i];
            let ri = env.range(i);
            // row i of L
            for j in fi..i {
                let fj = env.first[j];
                let k0 = fi.max(fj);
                let s: T = (k0..j).map(|k| lower[ri.start + k - fi] * upper[env.ptr[j] + k - fj]).sum();
                lower[ri.start + j - fi] = (lower[ri.start + j - fi] - s) / diag[j];
            }
            // column i of U
            for j in fi..i {
                let fj = env.first[j];
                let k0 = fi.max(fj);
                let s: T = (k0..j).map(|k| lower[env.ptr[j] + k - fj] * upper[ri.start + k - fi]).sum();
                upper[ri.start + j - fi] -= s;
            }
            let s: T = (fi..i).map(|k| lower[ri.start + k - fi] * upper[ri.start + k - fi]).sum();
            let d = diag[i] - s;
            check_pivot(d, tol, i)?;
            diag[i] = d;
        }
        Ok(Self { env, lower, upper, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        for i in 0..n {
            let fi = self.env.first[i];
            let row = &self.lower[self.env.range(i)];
            let s: T = row.iter().zip(&x[fi..i]).map(|(&l, &y)| l * y).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            x[i] /= self.diag[i];
            let fi = self.env.first[i];
            let xi = x[i];
            let col = &self.upper[self.env.range(i)];
            for (k, &u) in col.iter().enumerate() {
                x[fi + k] -= u * xi;
            }
        }
    }
}

/// Reusable factorization of a square sparse operator.
#[derive(Debug, Clone)]
pub enum Factorization<T> {
    Ldlt(SkylineLdlt<T>),
    Lu(SkylineLu<T>),
}

impl<T: Scalar> Factorization<T> {
    /// `LDL^T` when the operator is flagged symmetric, `LU` otherwise.
    pub fn new(a: &SparseOperator<T>) -> Result<Self> {
        if a.is_symmetric_flagged() {
            SkylineLdlt::factor(a).map(Self::Ldlt)
        } else {
            SkylineLu::factor(a).map(Self::Lu)
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ldlt(f) => f.dim(),
            Self::Lu(f) => f.dim(),
        }
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        match self {
            Self::Ldlt(f) => f.solve_in_place(x),
            Self::Lu(f) => f.solve_in_place(x),
        }
    }
}

/// Factors `op` and solves `op x = rhs`.
pub fn factor_and_solve<T: Scalar>(op: &SparseOperator<T>, rhs: &[T]) -> Result<Vec<T>> {
    if rhs.len() != op.nrows() {
        return Err(LodError::DimensionMismatch(format!("rhs of length {} for {} rows", rhs.len(), op.nrows())));
    }
    Ok(Factorization::new(op)?.solve(rhs))
}
