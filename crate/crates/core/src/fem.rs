//! P1 finite element assembly on [`TriMesh`] and Dirichlet elimination.
//!
//! All x-integrals use the element barycenter as the single quadrature point.
//! Assembled operators are indexed by global node; boundary rows are removed
//! afterwards with [`eliminate_dirichlet`] or [`DofMap`].

use crate::error::{LodError, Result};
use crate::linalg::{Factorization, SparseOperator};
use crate::mesh::TriMesh;
use crate::scalar::{dot2, mat_vec2, Mat2, Scalar, Vec2};

/// Elementwise constant symmetric 2x2 coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField<T> {
    values: Vec<Mat2<T>>,
}

impl<T: Scalar> MatrixField<T> {
    pub fn new(values: Vec<Mat2<T>>) -> Self {
        Self { values }
    }

    pub fn constant(num_elements: usize, value: Mat2<T>) -> Self {
        Self { values: vec![value; num_elements] }
    }

    pub fn identity(num_elements: usize) -> Self {
        Self::constant(num_elements, crate::scalar::identity2())
    }

    pub fn from_fn(num_elements: usize, f: impl FnMut(usize) -> Mat2<T>) -> Self {
        Self { values: (0..num_elements).map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, e: usize) -> &Mat2<T> {
        &self.values[e]
    }

    pub fn values(&self) -> &[Mat2<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat2<T>] {
        &mut self.values
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { values: self.values.iter().map(|m| crate::scalar::scale2(m, s)).collect() }
    }

    /// Rejects non-finite or non-symmetric entries.
    pub fn validate(&self) -> Result<()> {
        for (e, m) in self.values.iter().enumerate() {
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(LodError::NonFinite(format!("matrix field on element {e}")));
            }
            let scale = m.iter().flatten().fold(T::zero(), |a, v| a.max(v.abs()));
            if (m[0][1] - m[1][0]).abs() > T::lit(1e-12) * scale.max(T::min_positive_value()) {
                return Err(LodError::NonSymmetricField { element: e });
            }
        }
        Ok(())
    }

    /// Smallest and largest eigenvalue over all elements.
    pub fn eigenvalue_bounds(&self) -> (T, T) {
        self.values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), m| {
            let (a, b) = crate::scalar::sym_eigenvalues2(m);
            (lo.min(a), hi.max(b))
        })
    }
}

fn shape_gradients_of<T: Scalar>(p: &[Vec2<T>; 3]) -> ([Vec2<T>; 3], T) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let inv = T::one() / det;
    (
        [
            [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
            [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
            [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
        ],
        det.abs() * T::lit(0.5),
    )
}

/// Element stiffness `|K| (A grad phi_b) . grad phi_a` on the triangle with vertices `p`.
pub fn local_stiffness<T: Scalar>(p: &[Vec2<T>; 3], coefficient: &Mat2<T>) -> [[T; 3]; 3] {
    let (g, area) = shape_gradients_of(p);
    local_stiffness_from_gradients(&g, area, coefficient)
}

pub fn local_stiffness_from_gradients<T: Scalar>(g: &[Vec2<T>; 3], area: T, coefficient: &Mat2<T>) -> [[T; 3]; 3] {
    let mut k = [[T::zero(); 3]; 3];
    for b in 0..3 {
        let flux = mat_vec2(coefficient, g[b]);
        for a in 0..3 {
            k[a][b] = area * dot2(flux, g[a]);
        }
    }
    k
}

/// Element mass matrix `a/12 [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn local_mass<T: Scalar>(area: T) -> [[T; 3]; 3] {
    let d = area / T::lit(6.0);
    let o = area / T::lit(12.0);
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// CSR sparsity of the node-to-node coupling of a mesh, with the position of
/// every element-local entry inside the value array.
#[derive(Debug, Clone)]
pub struct AssemblyPattern {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    positions: Vec<[usize; 9]>,
}

impl AssemblyPattern {
    pub fn new<T: Scalar>(mesh: &TriMesh<T>) -> Self {
        let n = mesh.num_nodes();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for el in mesh.elements() {
            for &a in el {
                for &b in el {
                    rows[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let positions = mesh
            .elements()
            .iter()
            .map(|el| {
                let mut pos = [0usize; 9];
                for a in 0..3 {
                    let cols = &col_idx[row_ptr[el[a]]..row_ptr[el[a] + 1]];
                    for b in 0..3 {
                        pos[3 * a + b] = row_ptr[el[a]] + cols.binary_search(&el[b]).unwrap();
                    }
                }
                pos
            })
            .collect();
        Self { num_nodes: n, row_ptr, col_idx, positions }
    }

    /// Sums element matrices produced by `local` into a node-indexed operator.
    pub fn assemble<T: Scalar>(&self, mut local: impl FnMut(usize) -> [[T; 3]; 3]) -> SparseOperator<T> {
        let mut values = vec![T::zero(); self.col_idx.len()];
        for (e, pos) in self.positions.iter().enumerate() {
            let k = local(e);
            for a in 0..3 {
                for b in 0..3 {
                    values[pos[3 * a + b]] += k[a][b];
                }
            }
        }
        SparseOperator::from_csr(self.num_nodes, self.num_nodes, self.row_ptr.clone(), self.col_idx.clone(), values)
    }
}

/// Stiffness operator of `-div(A grad u)` on all mesh nodes.
pub fn assemble_stiffness<T: Scalar>(mesh: &TriMesh<T>, field: &MatrixField<T>) -> Result<SparseOperator<T>> {
    assemble_stiffness_with(&AssemblyPattern::new(mesh), mesh, field)
}

pub fn assemble_stiffness_with<T: Scalar>(
    pattern: &AssemblyPattern,
    mesh: &TriMesh<T>,
    field: &MatrixField<T>,
) -> Result<SparseOperator<T>> {
    if field.len() != mesh.num_elements() {
        return Err(LodError::DimensionMismatch(format!(
            "field has {} values for {} elements",
            field.len(),
            mesh.num_elements()
        )));
    }
    field.validate()?;
    Ok(pattern
        .assemble(|e| local_stiffness_from_gradients(&mesh.shape_gradients(e), mesh.area(e), field.get(e)))
        .with_symmetry(true))
}

pub fn assemble_mass<T: Scalar>(mesh: &TriMesh<T>) -> SparseOperator<T> {
    AssemblyPattern::new(mesh).assemble(|e| local_mass(mesh.area(e))).with_symmetry(true)
}

/// Load vector `b_i = sum_K |K| f(x_K) / 3` over elements `K` containing node `i`.
pub fn assemble_load<T: Scalar>(mesh: &TriMesh<T>, f: impl Fn(Vec2<T>) -> T) -> Result<Vec<T>> {
    let mut b = vec![T::zero(); mesh.num_nodes()];
    let third = T::one() / T::lit(3.0);
    for e in 0..mesh.num_elements() {
        let v = f(mesh.barycenter(e));
        if !v.is_finite() {
            return Err(LodError::NonFinite(format!("source term on element {e}")));
        }
        let w = mesh.area(e) * v * third;
        for n in mesh.element(e) {
            b[n] += w;
        }
    }
    Ok(b)
}

/// Free (non-boundary) degrees of freedom and the node <-> dof maps.
#[derive(Debug, Clone)]
pub struct DofMap {
    free: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(boundary_flags: &[bool]) -> Self {
        let free: Vec<usize> = (0..boundary_flags.len()).filter(|&i| !boundary_flags[i]).collect();
        let mut dof_of_node = vec![None; boundary_flags.len()];
        for (d, &n) in free.iter().enumerate() {
            dof_of_node[n] = Some(d);
        }
        Self { free, dof_of_node }
    }

    pub fn of_mesh<T: Scalar>(mesh: &TriMesh<T>) -> Self {
        Self::new(mesh.boundary_flags())
    }

    pub fn num_dofs(&self) -> usize {
        self.free.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.dof_of_node.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn restrict<T: Scalar>(&self, full: &[T]) -> Vec<T> {
        self.free.iter().map(|&n| full[n]).collect()
    }

    /// Node vector with zeros on the boundary.
    pub fn expand<T: Scalar>(&self, reduced: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_nodes()];
        for (&n, &v) in self.free.iter().zip(reduced) {
            out[n] = v;
        }
        out
    }

    pub fn restrict_operator<T: Scalar>(&self, op: &SparseOperator<T>) -> SparseOperator<T> {
        op.submatrix(&self.free, &self.free)
    }
}

/// System with boundary rows and columns removed.
#[derive(Debug, Clone)]
pub struct ReducedSystem<T> {
    pub matrix: SparseOperator<T>,
    pub rhs: Vec<T>,
    pub dofs: DofMap,
}

impl<T: Scalar> ReducedSystem<T> {
    /// Solves and re-expands to a node vector that vanishes on the boundary.
    pub fn solve(&self) -> Result<Vec<T>> {
        if self.dofs.num_dofs() == 0 {
            return Ok(vec![T::zero(); self.dofs.num_nodes()]);
        }
        let x = Factorization::new(&self.matrix)?.solve(&self.rhs);
        Ok(self.dofs.expand(&x))
    }
}

pub fn eliminate_dirichlet<T: Scalar>(op: &SparseOperator<T>, rhs: &[T], boundary_flags: &[bool]) -> ReducedSystem<T> {
    let dofs = DofMap::new(boundary_flags);
    ReducedSystem { matrix: dofs.restrict_operator(op), rhs: dofs.restrict(rhs), dofs }
}

/// Exact `|v|_1^2` of a nodal P1 vector.
pub fn h1_seminorm_sq<T: Scalar>(mesh: &TriMesh<T>, v: &[T]) -> T {
    (0..mesh.num_elements())
        .map(|e| {
            let g = mesh.gradient(e, v);
            mesh.area(e) * dot2(g, g)
        })
        .sum()
}

/// Exact `||v||_0^2` of a nodal P1 vector.
pub fn l2_norm_sq<T: Scalar>(mesh: &TriMesh<T>, v: &[T]) -> T {
    (0..mesh.num_elements())
        .map(|e| {
            let m = local_mass(mesh.area(e));
            let el = mesh.element(e);
            let mut s = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    s += m[a][b] * v[el[a]] * v[el[b]];
                }
            }
            s
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;

    #[test]
    fn unit_right_triangle_stiffness() {
        let k = local_stiffness::<f64>(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[1.0, 0.0], [0.0, 1.0]]);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((k[a][b] - expected[a][b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_scales_linearly() {
        let mesh = TriMesh::<f64>::new(4).unwrap();
        let field = MatrixField::from_fn(mesh.num_elements(), |e| [[1.0 + e as f64, 0.3], [0.3, 2.0]]);
        let a = assemble_stiffness(&mesh, &field).unwrap();
        let b = assemble_stiffness(&mesh, &field.scaled(4.0)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(4.0 * x, *y);
        }
        assert!(a.symmetry_defect() <= 1e-12 * a.max_abs());
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let mesh = TriMesh::<f64>::new(2).unwrap();
        let a = assemble_stiffness(&mesh, &MatrixField::identity(mesh.num_elements())).unwrap();
        for i in mesh.interior_nodes() {
            let (_, vals) = a.row(i);
            assert!(vals.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_fields() {
        let mesh = TriMesh::<f64>::new(2).unwrap();
        let mut f = MatrixField::identity(mesh.num_elements());
        f.values_mut()[3] = [[1.0, 0.5], [0.0, 1.0]];
        assert!(matches!(assemble_stiffness(&mesh, &f), Err(LodError::NonSymmetricField { element: 3 })));
        f.values_mut()[3] = [[f64::NAN, 0.0], [0.0, 1.0]];
        assert!(matches!(assemble_stiffness(&mesh, &f), Err(LodError::NonFinite(_))));
    }

    #[test]
    fn mass_partition_of_unity() {
        let mesh = TriMesh::<f64>::new(1).unwrap();
        let m = assemble_mass(&mesh);
        assert!((m.values().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mesh = TriMesh::<f64>::new(8).unwrap();
        let one = vec![1.0; mesh.num_nodes()];
        assert!((assemble_mass(&mesh).bilinear(&one, &one) - 1.0).abs() < 1e-14);
        assert!((l2_norm_sq(&mesh, &one) - 1.0).abs() < 1e-14);
        let lm = local_mass(0.3_f64);
        assert!((lm[0][0] - 0.3 / 12.0 * 2.0).abs() < 1e-16 && (lm[0][1] - 0.3 / 12.0).abs() < 1e-16);
    }

    #[test]
    fn load_vector_totals() {
        let mesh = TriMesh::<f64>::new(8).unwrap();
        let b = assemble_load(&mesh, |_| 1.0).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(assemble_load(&mesh, |_| 0.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(assemble_load(&mesh, |_| f64::INFINITY).is_err());
    }

    #[test]
    fn load_one_point_rule_against_three_point_rule() {
        // f_1 with x0 = (0.45, 0.5); edge-midpoint rule as comparison
        let f = |p: [f64; 2]| 10.0 * (-0.1 * ((p[0] - 0.45).powi(2) + (p[1] - 0.5).powi(2))).exp();
        let mesh = TriMesh::<f64>::new(64).unwrap();
        let b = assemble_load(&mesh, f).unwrap();
        let mut b3 = vec![0.0; mesh.num_nodes()];
        for e in 0..mesh.num_elements() {
            let el = mesh.element(e);
            let p: Vec<[f64; 2]> = el.iter().map(|&n| mesh.node(n)).collect();
            let mid = |a: usize, c: usize| [(p[a][0] + p[c][0]) / 2.0, (p[a][1] + p[c][1]) / 2.0];
            let mids = [mid(0, 1), mid(1, 2), mid(2, 0)];
            // phi_a at the edge midpoints: 1/2 on the two edges touching a
            for a in 0..3 {
                let touching = [mids[a], mids[(a + 2) % 3]];
                let s: f64 = touching.iter().map(|&q| 0.5 * f(q)).sum();
                b3[el[a]] += mesh.area(e) / 3.0 * s;
            }
        }
        let d: Vec<f64> = b.iter().zip(&b3).map(|(x, y)| x - y).collect();
        assert!(norm2(&d) / norm2(&b3) <= 1e-3);
    }

    #[test]
    fn all_boundary_mesh_gives_empty_system() {
        let mesh = TriMesh::<f64>::new(1).unwrap();
        let a = assemble_stiffness(&mesh, &MatrixField::identity(2)).unwrap();
        let red = eliminate_dirichlet(&a, &[1.0; 4], mesh.boundary_flags());
        assert_eq!(red.matrix.nrows(), 0);
        assert_eq!(red.solve().unwrap(), vec![0.0; 4]);
    }

    /// Five-point finite differences on a much finer grid, Richardson-free.
    fn membrane_max_by_finite_differences(n: usize) -> f64 {
        let m = n - 1;
        let h2 = 1.0 / (n * n) as f64;
        let mut u = vec![0.0; m * m];
        // Gauss-Seidel with successive over-relaxation
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / n as f64).sin());
        for _ in 0..20_000 {
            let mut change: f64 = 0.0;
            for j in 0..m {
                for i in 0..m {
                    let at = |a: isize, b: isize| -> f64 {
                        if a < 0 || b < 0 || a >= m as isize || b >= m as isize {
                            0.0
                        } else {
                            u[b as usize * m + a as usize]
                        }
                    };
                    let (ii, jj) = (i as isize, j as isize);
                    let gs = 0.25 * (at(ii - 1, jj) + at(ii + 1, jj) + at(ii, jj - 1) + at(ii, jj + 1) + h2);
                    let k = j * m + i;
                    let new = u[k] + omega * (gs - u[k]);
                    change = change.max((new - u[k]).abs());
                    u[k] = new;
                }
            }
            if change < 1e-14 {
                break;
            }
        }
        u.iter().cloned().fold(0.0, f64::max)
    }

    #[test]
    fn poisson_membrane_maximum() {
        let mesh = TriMesh::<f64>::new(32).unwrap();
        let a = assemble_stiffness(&mesh, &MatrixField::identity(mesh.num_elements())).unwrap();
        let b = assemble_load(&mesh, |_| 1.0).unwrap();
        let u = eliminate_dirichlet(&a, &b, mesh.boundary_flags()).solve().unwrap();
        let umax = u.iter().cloned().fold(0.0, f64::max);
        let oracle = membrane_max_by_finite_differences(128);
        assert!((umax - 0.0736).abs() < 5e-4, "u_max = {umax}");
        assert!((umax - oracle).abs() < 5e-4, "u_max = {umax}, oracle = {oracle}");
    }

    #[test]
    fn symmetric_source_gives_diagonally_symmetric_solution() {
        let mesh = TriMesh::<f64>::new(16).unwrap();
        let a = assemble_stiffness(&mesh, &MatrixField::identity(mesh.num_elements())).unwrap();
        let b = assemble_load(&mesh, |p| 1.0 + p[0] * p[1]).unwrap();
        let u = eliminate_dirichlet(&a, &b, mesh.boundary_flags()).solve().unwrap();
        for j in 0..=16 {
            for i in 0..=16 {
                let d = u[mesh.node_index(i, j)] - u[mesh.node_index(j, i)];
                assert!(d.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stiffness_is_positive_definite_on_interior() {
        let mesh = TriMesh::<f64>::new(8).unwrap();
        let field = MatrixField::from_fn(mesh.num_elements(), |e| [[1.0 + (e % 3) as f64, 0.2], [0.2, 0.5]]);
        let a = assemble_stiffness(&mesh, &field).unwrap();
        let red = eliminate_dirichlet(&a, &vec![0.0; mesh.num_nodes()], mesh.boundary_flags());
        let f = crate::linalg::SkylineLdlt::factor(&red.matrix).unwrap();
        assert!(f.diagonal().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn seminorm_matches_identity_stiffness() {
        let mesh = TriMesh::<f64>::new(8).unwrap();
        let v: Vec<f64> = mesh.nodes().iter().map(|p| (3.0 * p[0]).sin() * p[1]).collect();
        let a = assemble_stiffness(&mesh, &MatrixField::identity(mesh.num_elements())).unwrap();
        assert!((a.bilinear(&v, &v) - h1_seminorm_sq(&mesh, &v)).abs() < 1e-12);
        let m = assemble_mass(&mesh);
        assert!((m.bilinear(&v, &v) - l2_norm_sq(&mesh, &v)).abs() < 1e-14);
    }
}
