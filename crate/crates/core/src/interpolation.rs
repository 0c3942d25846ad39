//! Quasi-interpolation `I_H = E_H o Pi_H` from the fine P1 space onto the
//! coarse P1 space.
//!
//! `Pi_H` is the elementwise L2 projection onto discontinuous affine
//! functions, represented by their three vertex values per coarse element.
//! `E_H` averages those vertex values over all coarse elements sharing a free
//! vertex and sets boundary vertices to zero. Both factors and their product
//! are materialized as sparse matrices.

use crate::error::Result;
use crate::fem::{local_mass, DofMap};
use crate::linalg::dense::solve3;
use crate::linalg::SparseOperator;
use crate::mesh::{NestedPair, Patch, TriMesh};
use crate::scalar::{dot2, Scalar, Vec2};

/// Entries below this fraction of the largest entry are roundoff from the
/// local mass inversion.
const DROP_TOLERANCE: f64 = 1e-12;

/// Value of the barycentric coordinate of vertex `a` of `mesh` element `t` at `p`.
fn barycentric<T: Scalar>(mesh: &TriMesh<T>, t: usize, a: usize, p: Vec2<T>) -> T {
    let g = mesh.shape_gradients(t)[a];
    let pa = mesh.node(mesh.element(t)[a]);
    T::one() + dot2(g, [p[0] - pa[0], p[1] - pa[1]])
}

/// Elementwise L2 projection: row `3 T + a` gives the value at vertex `a` of
/// the projection onto affine functions on coarse element `T`; columns are
/// fine nodes.
pub fn build_l2_projection<T: Scalar>(pair: &NestedPair<T>) -> SparseOperator<T> {
    let coarse = &pair.coarse;
    let fine = &pair.fine;
    let mut triplets = Vec::new();
    for t in 0..coarse.num_elements() {
        // inverse of the coarse local mass, column by column
        let mass = local_mass(coarse.area(t));
        let mut inv = [[T::zero(); 3]; 3];
        for k in 0..3 {
            let mut e = [T::zero(); 3];
            e[k] = T::one();
            let col = solve3(&mass, &e).expect("coarse element with positive area");
            for a in 0..3 {
                inv[a][k] = col[a];
            }
        }
        // moments int_T phi_b lambda_k, exact for products of affine functions
        let mut moments: Vec<(usize, [T; 3])> = Vec::new();
        for &kf in pair.fine_elements_of(t) {
            let el = fine.element(kf);
            let m = local_mass(fine.area(kf));
            let lam: [[T; 3]; 3] =
                std::array::from_fn(|k| std::array::from_fn(|c| barycentric(coarse, t, k, fine.node(el[c]))));
            for b in 0..3 {
                let mut mom = [T::zero(); 3];
                for (k, mk) in mom.iter_mut().enumerate() {
                    *mk = (0..3).map(|c| lam[k][c] * m[b][c]).sum();
                }
                moments.push((el[b], mom));
            }
        }
        for (node, mom) in moments {
            for a in 0..3 {
                let v: T = (0..3).map(|k| inv[a][k] * mom[k]).sum();
                triplets.push((3 * t + a, node, v));
            }
        }
    }
    drop_small(SparseOperator::from_triplets(3 * coarse.num_elements(), fine.num_nodes(), triplets))
}

/// Nodal averaging of elementwise affine functions (rows: coarse nodes,
/// columns: `3 T + a`). Boundary vertices map to zero.
pub fn build_averaging<T: Scalar>(coarse: &TriMesh<T>) -> SparseOperator<T> {
    let mut triplets = Vec::new();
    for z in 0..coarse.num_nodes() {
        if coarse.is_boundary(z) {
            continue;
        }
        let elems = coarse.elements_of_node(z);
        let w = T::one() / T::from_usize_lossy(elems.len());
        for &t in elems {
            let a = coarse.element(t).iter().position(|&v| v == z).unwrap();
            triplets.push((z, 3 * t + a, w));
        }
    }
    SparseOperator::from_triplets(coarse.num_nodes(), 3 * coarse.num_elements(), triplets)
}

fn drop_small<T: Scalar>(op: SparseOperator<T>) -> SparseOperator<T> {
    let tol = op.max_abs() * T::lit(DROP_TOLERANCE);
    let mut triplets = Vec::with_capacity(op.nnz());
    for i in 0..op.nrows() {
        let (cols, vals) = op.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            if v.abs() > tol {
                triplets.push((i, c, v));
            }
        }
    }
    SparseOperator::from_triplets(op.nrows(), op.ncols(), triplets)
}

/// Sparse `I_H` restricted to free degrees of freedom: rows are coarse dofs,
/// columns are global fine node indices (boundary columns are empty).
#[derive(Debug, Clone)]
pub struct InterpolationOperator<T> {
    matrix: SparseOperator<T>,
    transpose: SparseOperator<T>,
    coarse_dofs: DofMap,
    fine_dofs: DofMap,
}

impl<T: Scalar> InterpolationOperator<T> {
    pub fn matrix(&self) -> &SparseOperator<T> {
        &self.matrix
    }

    pub fn transpose(&self) -> &SparseOperator<T> {
        &self.transpose
    }

    pub fn coarse_dofs(&self) -> &DofMap {
        &self.coarse_dofs
    }

    pub fn fine_dofs(&self) -> &DofMap {
        &self.fine_dofs
    }

    /// Coarse dof values of `I_H v` for a fine node vector `v`.
    pub fn apply(&self, fine: &[T]) -> Vec<T> {
        self.matrix.mul_vec(fine)
    }

    /// `I_H v` as a coarse node vector (zero on the boundary).
    pub fn apply_nodal(&self, fine: &[T]) -> Vec<T> {
        self.coarse_dofs.expand(&self.apply(fine))
    }
}

/// Builds `E_H Pi_H` restricted to interior coarse rows and interior fine columns.
pub fn compose_interpolation<T: Scalar>(pair: &NestedPair<T>) -> Result<InterpolationOperator<T>> {
    let pi = build_l2_projection(pair);
    let avg = build_averaging(&pair.coarse);
    let full = avg.matmul(&pi)?;
    let coarse_dofs = DofMap::of_mesh(&pair.coarse);
    let fine_dofs = DofMap::of_mesh(&pair.fine);
    let mut triplets = Vec::new();
    for (d, &z) in coarse_dofs.free_nodes().iter().enumerate() {
        let (cols, vals) = full.row(z);
        for (&c, &v) in cols.iter().zip(vals) {
            if !pair.fine.is_boundary(c) {
                triplets.push((d, c, v));
            }
        }
    }
    let matrix = drop_small(SparseOperator::from_triplets(coarse_dofs.num_dofs(), pair.fine.num_nodes(), triplets));
    let transpose = matrix.transpose();
    Ok(InterpolationOperator { matrix, transpose, coarse_dofs, fine_dofs })
}

/// Coarse hat functions sampled at fine nodes: row `d` is the fine nodal
/// vector of the hat of coarse dof `d`.
pub fn prolongation<T: Scalar>(pair: &NestedPair<T>) -> SparseOperator<T> {
    let coarse_dofs = DofMap::of_mesh(&pair.coarse);
    let tiny = T::lit(1e-12);
    let mut triplets = Vec::new();
    for node in 0..pair.fine.num_nodes() {
        if pair.fine.is_boundary(node) {
            continue;
        }
        let p = pair.fine.node(node);
        let t = pair.coarse.element_containing(p);
        for (a, &z) in pair.coarse.element(t).iter().enumerate() {
            if let Some(d) = coarse_dofs.dof(z) {
                let v = barycentric(&pair.coarse, t, a, p);
                if v.abs() > tiny {
                    triplets.push((d, node, v));
                }
            }
        }
    }
    SparseOperator::from_triplets(coarse_dofs.num_dofs(), pair.fine.num_nodes(), triplets)
}

/// Rows of `I_H` restricted to the interior fine nodes of a patch.
#[derive(Debug, Clone)]
pub struct ConstraintRows<T> {
    /// Coarse dof of each row.
    pub coarse_dofs: Vec<usize>,
    /// `rows.len() x patch.interior_fine_nodes.len()`, columns in interior order.
    pub rows: SparseOperator<T>,
}

/// Collects every coarse dof whose `I_H` row touches the patch interior.
pub fn kernel_constraints<T: Scalar>(op: &InterpolationOperator<T>, patch: &Patch) -> ConstraintRows<T> {
    let interior = patch.interior_global_nodes();
    let mut entries: Vec<(usize, usize, T)> = Vec::new();
    for (col, &g) in interior.iter().enumerate() {
        let (rows, vals) = op.transpose.row(g);
        for (&z, &v) in rows.iter().zip(vals) {
            entries.push((z, col, v));
        }
    }
    let mut coarse_dofs: Vec<usize> = entries.iter().map(|e| e.0).collect();
    coarse_dofs.sort_unstable();
    coarse_dofs.dedup();
    let triplets = entries
        .into_iter()
        .map(|(z, c, v)| (coarse_dofs.binary_search(&z).unwrap(), c, v))
        .collect();
    let rows = SparseOperator::from_triplets(coarse_dofs.len(), interior.len(), triplets);
    ConstraintRows { coarse_dofs, rows }
}
