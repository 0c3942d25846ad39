//! Relative error measures and the a priori corrector-perturbation indicator.

use rayon::prelude::*;
use serde::Serialize;

use crate::corrector::{CorrectorSet, ElementCorrector};
use crate::error::{LodError, Result};
use crate::fem::{assemble_mass, assemble_stiffness, MatrixField};
use crate::interpolation::{prolongation, InterpolationOperator};
use crate::linalg::{Factorization, SparseOperator};
use crate::mesh::{NestedPair, Patch, TriMesh};
use crate::scalar::{spectral_norm2, sym_eigenvalues2, Mat2, Scalar};

/// One row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub coarse_h: f64,
    pub fine_h: f64,
    pub layers: usize,
    /// `||u_h - I_H u||_0 / ||u_h||_0`.
    pub e_h: f64,
    /// `|u_h - u|_1 / |u_h|_1`.
    pub e_lod: f64,
    /// Relative L2 error of the best approximation of `u_h` in `V_H`.
    pub best_l2: f64,
}

/// Fine mass and Laplace stiffness plus the coarse embedding, shared by all
/// error evaluations on one mesh pair.
#[derive(Debug, Clone)]
pub struct ErrorMeasures<'a, T> {
    pair: &'a NestedPair<T>,
    interpolation: &'a InterpolationOperator<T>,
    mass: SparseOperator<T>,
    laplace: SparseOperator<T>,
    hats: SparseOperator<T>,
    hats_t: SparseOperator<T>,
}

impl<'a, T: Scalar> ErrorMeasures<'a, T> {
    pub fn new(pair: &'a NestedPair<T>, interpolation: &'a InterpolationOperator<T>) -> Result<Self> {
        let mass = assemble_mass(&pair.fine);
        let laplace = assemble_stiffness(&pair.fine, &MatrixField::identity(pair.fine.num_elements()))?;
        let hats = prolongation(pair);
        let hats_t = hats.transpose();
        Ok(Self { pair, interpolation, mass, laplace, hats, hats_t })
    }

    fn norm_sq(op: &SparseOperator<T>, v: &[T]) -> T {
        op.bilinear(v, v).max(T::zero())
    }

    fn relative(op: &SparseOperator<T>, reference: &[T], other: &[T]) -> Result<f64> {
        let denom = Self::norm_sq(op, reference);
        if denom <= T::zero() {
            return Err(LodError::ZeroReferenceNorm);
        }
        let diff: Vec<T> = reference.iter().zip(other).map(|(&a, &b)| a - b).collect();
        Ok((Self::norm_sq(op, &diff) / denom).sqrt().to_f64_lossy())
    }

    /// `|u_ref - u|_1 / |u_ref|_1`.
    pub fn relative_h1(&self, reference: &[T], u: &[T]) -> Result<f64> {
        Self::relative(&self.laplace, reference, u)
    }

    /// `||u_ref - u||_0 / ||u_ref||_0`.
    pub fn relative_l2(&self, reference: &[T], u: &[T]) -> Result<f64> {
        Self::relative(&self.mass, reference, u)
    }

    /// Fine nodal vector of `I_H u`.
    pub fn interpolate(&self, u: &[T]) -> Vec<T> {
        self.hats_t.mul_vec(&self.interpolation.apply(u))
    }

    /// Macroscopic error; `in_coarse_space` skips `I_H` for functions already in `V_H`.
    pub fn e_h(&self, reference: &[T], u: &[T], in_coarse_space: bool) -> Result<f64> {
        if in_coarse_space {
            self.relative_l2(reference, u)
        } else {
            self.relative_l2(reference, &self.interpolate(u))
        }
    }

    /// L2-orthogonal projection of `u_ref` onto the embedded coarse space and
    /// its relative error.
    pub fn best_l2_approximation(&self, reference: &[T]) -> Result<(Vec<T>, f64)> {
        if self.hats.nrows() == 0 {
            let zero = vec![T::zero(); reference.len()];
            let err = self.relative_l2(reference, &zero)?;
            return Ok((zero, err));
        }
        let gram = self.hats.matmul(&self.mass.matmul(&self.hats_t)?)?.with_symmetry(true);
        let rhs = self.hats.mul_vec(&self.mass.mul_vec(reference));
        let c = Factorization::new(&gram)?.solve(&rhs);
        let projection = self.hats_t.mul_vec(&c);
        let err = self.relative_l2(reference, &projection)?;
        Ok((projection, err))
    }

    pub fn pair(&self) -> &NestedPair<T> {
        self.pair
    }
}

/// Coefficient divided by its area-weighted trace average over a set of elements.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledField<T> {
    pub average_trace: T,
    /// Scaled values, aligned with the element list passed in.
    pub values: Vec<Mat2<T>>,
}

pub fn scale_coefficient<T: Scalar>(mesh: &TriMesh<T>, field: &MatrixField<T>, elements: &[usize]) -> Result<ScaledField<T>> {
    let mut area = T::zero();
    let mut weighted = T::zero();
    for &k in elements {
        let a = field.get(k);
        area += mesh.area(k);
        weighted += mesh.area(k) * (a[0][0] + a[1][1]);
    }
    let average = if area > T::zero() { weighted / area } else { T::zero() };
    if !(average > T::zero()) {
        return Err(LodError::NonPositiveTrace(average.to_f64_lossy()));
    }
    let values = elements.iter().map(|&k| crate::scalar::scale2(field.get(k), T::one() / average)).collect();
    Ok(ScaledField { average_trace: average, values })
}

/// `E_{Q,T}` for the corrector of `field` on `patch` against the perturbed
/// coefficient `perturbed`.
pub fn compute_indicator<T: Scalar>(
    pair: &NestedPair<T>,
    patch: &Patch,
    field: &MatrixField<T>,
    perturbed: &MatrixField<T>,
    corrector: &ElementCorrector<T>,
) -> Result<T> {
    if corrector.element != patch.center_element || corrector.layers != patch.layers {
        return Err(LodError::MissingCorrector(patch.center_element));
    }
    let fine = &pair.fine;
    let a = scale_coefficient(fine, field, &patch.fine_elements)?;
    let b = scale_coefficient(fine, perturbed, &patch.fine_elements)?;
    let t = patch.center_element;
    let area_t = pair.coarse.area(t);
    let q = |j: usize, node: usize| corrector.nodes.binary_search(&node).map_or(T::zero(), |i| corrector.values[j][i]);

    let mut total = T::zero();
    for &tp in &patch.coarse_elements {
        let mut sup = T::zero();
        let mut m = [[T::zero(); 2]; 2];
        for &k in pair.fine_elements_of(tp) {
            let pos = patch.fine_elements.binary_search(&k).expect("patch covers its coarse elements");
            let d = [
                [b.values[pos][0][0] - a.values[pos][0][0], b.values[pos][0][1] - a.values[pos][0][1]],
                [b.values[pos][1][0] - a.values[pos][1][0], b.values[pos][1][1] - a.values[pos][1][1]],
            ];
            // Differences at the rounding level of the trace scaling are treated
            // as equal fields, so global rescalings give exactly zero.
            let floor = T::lit(1e3) * T::epsilon() * (spectral_norm2(&a.values[pos]) + spectral_norm2(&b.values[pos]));
            let diff = spectral_norm2(&d);
            if diff > floor {
                sup = sup.max(diff);
            }
            let el = fine.element(k);
            let g = fine.shape_gradients(k);
            let mut w = [[T::zero(); 2]; 2];
            for (j, wj) in w.iter_mut().enumerate() {
                let mut grad = [T::zero(); 2];
                for (v, gv) in el.iter().zip(&g) {
                    let qv = q(j, *v);
                    grad[0] += qv * gv[0];
                    grad[1] += qv * gv[1];
                }
                let chi = if tp == t { T::one() } else { T::zero() };
                wj[0] = if j == 0 { chi } else { T::zero() } - grad[0];
                wj[1] = if j == 1 { chi } else { T::zero() } - grad[1];
            }
            let area = fine.area(k);
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += area * (w[r][0] * w[c][0] + w[r][1] * w[c][1]);
                }
            }
        }
        let mu = sym_eigenvalues2(&m).1 / area_t;
        total += sup * sup * mu;
    }
    Ok(total.sqrt())
}

/// Indicator for every coarse element, computed in parallel.
pub fn compute_indicators<T: Scalar>(
    pair: &NestedPair<T>,
    field: &MatrixField<T>,
    perturbed: &MatrixField<T>,
    correctors: &CorrectorSet<T>,
) -> Result<Vec<T>> {
    (0..pair.coarse.num_elements())
        .into_par_iter()
        .map(|t| {
            let patch = pair.patch(t, correctors.layers())?;
            compute_indicator(pair, &patch, field, perturbed, correctors.corrector(t)?)
        })
        .collect()
}
