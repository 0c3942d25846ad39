//! Element correctors on oversampling patches and the multiscale basis.
//!
//! For a coarse element `T` and direction `j` the corrector `q` lives on the
//! interior fine nodes of the patch, satisfies `I_H q = 0` and
//! `a(q, w) = int_T A e_j . grad w` for all such `w`. The kernel constraint
//! is enforced with Lagrange multipliers appended after the fine unknowns.

use std::io::{Read, Write};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{LodError, Result};
use crate::fem::{h1_seminorm_sq, DofMap, MatrixField};
use crate::interpolation::{kernel_constraints, prolongation, InterpolationOperator};
use crate::linalg::{Factorization, SparseOperator};
use crate::mesh::{NestedPair, Patch};
use crate::scalar::{mat_vec2, Scalar};

/// Correctors `q^(1), q^(2)` of one coarse element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementCorrector<T> {
    pub element: usize,
    pub layers: usize,
    /// Global fine node of each stored value (the patch interior, ascending).
    pub nodes: Vec<usize>,
    pub values: [Vec<T>; 2],
    pub coefficient_hash: [u8; 32],
}

impl<T: Scalar> ElementCorrector<T> {
    /// Corrector `j` as a full fine node vector.
    pub fn expand(&self, j: usize, num_fine_nodes: usize) -> Vec<T> {
        let mut out = vec![T::zero(); num_fine_nodes];
        for (&n, &v) in self.nodes.iter().zip(&self.values[j]) {
            out[n] = v;
        }
        out
    }
}

/// SHA-256 of the coefficient restricted to the patch fine elements.
pub fn coefficient_hash<T: Scalar>(patch: &Patch, field: &MatrixField<T>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((patch.layers as u64).to_le_bytes());
    for &k in &patch.fine_elements {
        h.update((k as u64).to_le_bytes());
        for row in field.get(k) {
            for v in row {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

/// Solves both cell problems of `patch` with one factorization.
pub fn solve_element_corrector<T: Scalar>(
    pair: &NestedPair<T>,
    patch: &Patch,
    field: &MatrixField<T>,
    interpolation: &InterpolationOperator<T>,
) -> Result<ElementCorrector<T>> {
    let fine = &pair.fine;
    let nodes = patch.interior_global_nodes();
    let n = nodes.len();
    let hash = coefficient_hash(patch, field);
    let element = patch.center_element;
    if n == 0 {
        return Ok(ElementCorrector { element, layers: patch.layers, nodes, values: [vec![], vec![]], coefficient_hash: hash });
    }
    let local = |g: usize| nodes.binary_search(&g).ok();

    let constraints = kernel_constraints(interpolation, patch);
    let p = constraints.rows.nrows();
    let mut triplets = Vec::new();
    for &k in &patch.fine_elements {
        let el = fine.element(k);
        let g = fine.shape_gradients(k);
        let area = fine.area(k);
        let a = field.get(k);
        let ids = el.map(local);
        for (r, gr) in ids.iter().zip(&g) {
            let Some(r) = *r else { continue };
            let ag = mat_vec2(a, *gr);
            for (c, gc) in ids.iter().zip(&g) {
                if let Some(c) = *c {
                    triplets.push((r, c, area * (ag[0] * gc[0] + ag[1] * gc[1])));
                }
            }
        }
    }
    for r in 0..p {
        let (cols, vals) = constraints.rows.row(r);
        let scale = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push((n + r, c, v / scale));
            triplets.push((c, n + r, v / scale));
        }
    }
    let system = SparseOperator::from_triplets(n + p, n + p, triplets).with_symmetry(true);
    let factor = Factorization::new(&system).map_err(|e| match e {
        LodError::SingularMatrix { pivot } => LodError::SingularSaddlePoint { element, pivot },
        other => other,
    })?;

    let mut values = [Vec::new(), Vec::new()];
    for (j, out) in values.iter_mut().enumerate() {
        let mut rhs = vec![T::zero(); n + p];
        for &k in pair.fine_elements_of(element) {
            let g = fine.shape_gradients(k);
            let a = field.get(k);
            let col = [a[0][j], a[1][j]];
            let area = fine.area(k);
            for (v, gv) in fine.element(k).iter().zip(&g) {
                if let Some(i) = local(*v) {
                    rhs[i] += area * (col[0] * gv[0] + col[1] * gv[1]);
                }
            }
        }
        factor.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(LodError::NonFinite(format!("corrector of element {element}")));
        }
        rhs.truncate(n);
        *out = rhs;
    }
    Ok(ElementCorrector { element, layers: patch.layers, nodes, values, coefficient_hash: hash })
}

/// Computes the correctors of every coarse element in parallel. Correctors in
/// `reuse` whose element, layer count and coefficient hash match are taken
/// over instead of being recomputed. Returns the correctors (ordered by
/// element) and the number of patch solves performed.
pub fn compute_correctors<T: Scalar>(
    pair: &NestedPair<T>,
    interpolation: &InterpolationOperator<T>,
    field: &MatrixField<T>,
    layers: usize,
    reuse: &[ElementCorrector<T>],
) -> Result<(Vec<ElementCorrector<T>>, usize)> {
    if field.len() != pair.fine.num_elements() {
        return Err(LodError::DimensionMismatch(format!(
            "coefficient field has {} entries for {} fine elements",
            field.len(),
            pair.fine.num_elements()
        )));
    }
    let results: Vec<(ElementCorrector<T>, bool)> = (0..pair.coarse.num_elements())
        .into_par_iter()
        .map(|t| {
            let patch = pair.patch(t, layers)?;
            let hash = coefficient_hash(&patch, field);
            let matching = |c: &&ElementCorrector<T>| c.element == t && c.layers == layers && c.coefficient_hash == hash;
            if let Some(old) = reuse.get(t).filter(matching).or_else(|| reuse.iter().find(matching)) {
                return Ok((old.clone(), false));
            }
            solve_element_corrector(pair, &patch, field, interpolation).map(|c| (c, true))
        })
        .collect::<Result<_>>()?;
    let solves = results.iter().filter(|r| r.1).count();
    Ok((results.into_iter().map(|r| r.0).collect(), solves))
}

/// Element correctors together with the assembled multiscale basis.
#[derive(Debug, Clone)]
pub struct CorrectorSet<T> {
    layers: usize,
    correctors: Vec<ElementCorrector<T>>,
    /// Coarse dofs x fine nodes; row `d` is the basis function of coarse dof `d`.
    basis: SparseOperator<T>,
    basis_transpose: SparseOperator<T>,
    coarse_dofs: DofMap,
    solves: usize,
}

impl<T: Scalar> CorrectorSet<T> {
    /// Computes all correctors for `field` and assembles the basis.
    pub fn build(
        pair: &NestedPair<T>,
        interpolation: &InterpolationOperator<T>,
        field: &MatrixField<T>,
        layers: usize,
        reuse: &[ElementCorrector<T>],
    ) -> Result<Self> {
        let (correctors, solves) = compute_correctors(pair, interpolation, field, layers, reuse)?;
        let mut set = assemble_basis(pair, correctors)?;
        set.solves = solves;
        Ok(set)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn correctors(&self) -> &[ElementCorrector<T>] {
        &self.correctors
    }

    pub fn corrector(&self, element: usize) -> Result<&ElementCorrector<T>> {
        self.correctors.get(element).ok_or(LodError::MissingCorrector(element))
    }

    pub fn basis(&self) -> &SparseOperator<T> {
        &self.basis
    }

    pub fn basis_transpose(&self) -> &SparseOperator<T> {
        &self.basis_transpose
    }

    pub fn coarse_dofs(&self) -> &DofMap {
        &self.coarse_dofs
    }

    pub fn num_basis(&self) -> usize {
        self.basis.nrows()
    }

    /// Patch solves performed while building (reused correctors excluded).
    pub fn solve_count(&self) -> usize {
        self.solves
    }

    /// Fine nodal vector of `sum_d c_d basis_d`.
    pub fn expand(&self, coarse: &[T]) -> Vec<T> {
        self.basis_transpose.mul_vec(coarse)
    }

    /// Digest over all element hashes, identifying the coefficient the set was built for.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for c in &self.correctors {
            h.update(c.coefficient_hash);
        }
        h.finalize().into()
    }
}

/// Assembles `lambda_z - sum_{T ∋ z} sum_j (d_j lambda_z|_T) q_T^(j)` for every free coarse node.
pub fn assemble_basis<T: Scalar>(pair: &NestedPair<T>, correctors: Vec<ElementCorrector<T>>) -> Result<CorrectorSet<T>> {
    let coarse = &pair.coarse;
    let dofs = DofMap::of_mesh(coarse);
    if correctors.len() < coarse.num_elements() {
        return Err(LodError::MissingCorrector(correctors.len()));
    }
    if let Some(t) = (0..coarse.num_elements()).find(|&t| correctors[t].element != t) {
        return Err(LodError::MissingCorrector(t));
    }
    let layers = correctors.first().map_or(0, |c| c.layers);
    let hats = prolongation(pair);
    let mut triplets = Vec::with_capacity(hats.nnz());
    for d in 0..hats.nrows() {
        let (cols, vals) = hats.row(d);
        triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (d, c, v)));
    }
    for (t, corr) in correctors.iter().enumerate() {
        let g = coarse.shape_gradients(t);
        for (a, &z) in coarse.element(t).iter().enumerate() {
            let Some(d) = dofs.dof(z) else { continue };
            for (i, &node) in corr.nodes.iter().enumerate() {
                let v = g[a][0] * corr.values[0][i] + g[a][1] * corr.values[1][i];
                triplets.push((d, node, -v));
            }
        }
    }
    let basis = SparseOperator::from_triplets(dofs.num_dofs(), pair.fine.num_nodes(), triplets);
    let basis_transpose = basis.transpose();
    Ok(CorrectorSet { layers, correctors, basis, basis_transpose, coarse_dofs: dofs, solves: 0 })
}

/// `Q_m v_H = sum_T sum_j (d_j v_H|_T) q_T^(j)` for a coarse dof vector `v_H`.
pub fn apply_global_corrector<T: Scalar>(pair: &NestedPair<T>, set: &CorrectorSet<T>, coarse: &[T]) -> Vec<T> {
    let nodal = set.coarse_dofs.expand(coarse);
    let mut out = vec![T::zero(); pair.fine.num_nodes()];
    for (t, corr) in set.correctors.iter().enumerate() {
        let g = pair.coarse.gradient(t, &nodal);
        for (i, &node) in corr.nodes.iter().enumerate() {
            out[node] += g[0] * corr.values[0][i] + g[1] * corr.values[1][i];
        }
    }
    out
}

/// Geometric rate `beta` from a least-squares fit of `ln gap_m = c + m ln beta`
/// over the strictly positive gaps (`gaps[i]` belongs to `m = i + 1`).
/// `None` with fewer than two usable points.
pub fn decay_rate(gaps: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        gaps.iter().enumerate().filter(|(_, &g)| g > 0.0).map(|(i, &g)| ((i + 1) as f64, g.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// `|(Q_{m_max} - Q_m) v_H|_1` for `m = 1 .. m_max - 1`.
pub fn decay_study<T: Scalar>(
    pair: &NestedPair<T>,
    interpolation: &InterpolationOperator<T>,
    field: &MatrixField<T>,
    coarse: &[T],
    max_layers: usize,
) -> Result<Vec<T>> {
    let applied = (1..=max_layers)
        .map(|m| {
            let set = CorrectorSet::build(pair, interpolation, field, m, &[])?;
            Ok(apply_global_corrector(pair, &set, coarse))
        })
        .collect::<Result<Vec<_>>>()?;
    let Some(reference) = applied.last() else { return Ok(Vec::new()) };
    Ok(applied[..applied.len() - 1]
        .iter()
        .map(|q| {
            let diff: Vec<T> = reference.iter().zip(q).map(|(&a, &b)| a - b).collect();
            h1_seminorm_sq(&pair.fine, &diff).sqrt()
        })
        .collect())
}

const CACHE_MAGIC: &[u8; 8] = b"LODCORR1";

/// Contents of a corrector cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorCache<T> {
    pub coarse_divisions: usize,
    pub fine_divisions: usize,
    pub layers: usize,
    pub correctors: Vec<ElementCorrector<T>>,
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad_cache(msg: &str) -> LodError {
    LodError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()))
}

impl<T: Scalar> CorrectorCache<T> {
    /// Layout (little endian): magic, scalar width in bytes, coarse and fine
    /// divisions, layers, element count; per element: index, hash, node
    /// count, nodes, then both corrector vectors as f64.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        put_u64(&mut w, std::mem::size_of::<T>() as u64)?;
        put_u64(&mut w, self.coarse_divisions as u64)?;
        put_u64(&mut w, self.fine_divisions as u64)?;
        put_u64(&mut w, self.layers as u64)?;
        put_u64(&mut w, self.correctors.len() as u64)?;
        for c in &self.correctors {
            put_u64(&mut w, c.element as u64)?;
            w.write_all(&c.coefficient_hash)?;
            put_u64(&mut w, c.nodes.len() as u64)?;
            for &n in &c.nodes {
                put_u64(&mut w, n as u64)?;
            }
            for v in c.values.iter().flatten() {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(bad_cache("not a corrector cache"));
        }
        if get_u64(&mut r)? != std::mem::size_of::<T>() as u64 {
            return Err(bad_cache("scalar width mismatch"));
        }
        let coarse_divisions = get_u64(&mut r)? as usize;
        let fine_divisions = get_u64(&mut r)? as usize;
        let layers = get_u64(&mut r)? as usize;
        let count = get_u64(&mut r)? as usize;
        let mut correctors = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let element = get_u64(&mut r)? as usize;
            let mut coefficient_hash = [0u8; 32];
            r.read_exact(&mut coefficient_hash)?;
            let n = get_u64(&mut r)? as usize;
            let nodes = (0..n).map(|_| get_u64(&mut r).map(|v| v as usize)).collect::<std::io::Result<Vec<_>>>()?;
            let mut values = [Vec::with_capacity(n), Vec::with_capacity(n)];
            for vals in values.iter_mut() {
                for _ in 0..n {
                    vals.push(T::lit(f64::from_bits(get_u64(&mut r)?)));
                }
            }
            correctors.push(ElementCorrector { element, layers, nodes, values, coefficient_hash });
        }
        Ok(Self { coarse_divisions, fine_divisions, layers, correctors })
    }

    /// Whether this cache was written for the given meshes and layer count.
    pub fn matches(&self, pair: &NestedPair<T>, layers: usize) -> bool {
        self.coarse_divisions == pair.coarse.divisions() && self.fine_divisions == pair.fine.divisions() && self.layers == layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_stiffness;
    use crate::interpolation::compose_interpolation;
    use nalgebra::{DMatrix, DVector};

    fn setup(nc: usize, nf: usize) -> (NestedPair<f64>, InterpolationOperator<f64>) {
        let pair = NestedPair::new(nc, nf).unwrap();
        let op = compose_interpolation(&pair).unwrap();
        (pair, op)
    }

    fn wavy(pair: &NestedPair<f64>) -> MatrixField<f64> {
        MatrixField::from_fn(pair.fine.num_elements(), |k| {
            let x = pair.fine.barycenter(k);
            let s = 1.5 + (7.0 * x[0]).sin() * (5.0 * x[1]).cos();
            [[s, 0.2 * s], [0.2 * s, 0.8 * s]]
        })
    }

    fn dense_stiffness(pair: &NestedPair<f64>, field: &MatrixField<f64>, nodes: &[usize]) -> DMatrix<f64> {
        let s = assemble_stiffness(&pair.fine, field).unwrap().submatrix(nodes, nodes);
        DMatrix::from_fn(nodes.len(), nodes.len(), |i, j| s.get(i, j))
    }

    fn dense_constraints(op: &InterpolationOperator<f64>, nodes: &[usize]) -> DMatrix<f64> {
        let all: Vec<usize> = (0..op.matrix().nrows()).collect();
        let c = op.matrix().submatrix(&all, nodes);
        DMatrix::from_fn(all.len(), nodes.len(), |i, j| c.get(i, j))
    }

    #[test]
    fn equal_meshes_give_zero_correctors() {
        let (pair, op) = setup(4, 4);
        let field = MatrixField::identity(pair.fine.num_elements());
        let set = CorrectorSet::build(&pair, &op, &field, 2, &[]).unwrap();
        for c in set.correctors() {
            assert!(c.values.iter().flatten().all(|v| v.abs() < 1e-13));
        }
        let hats = prolongation(&pair);
        let diff = set.basis().to_dense();
        let want = hats.to_dense();
        for (a, b) in diff.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn saturated_corrector_matches_null_space_oracle() {
        let (pair, op) = setup(4, 16);
        let field = MatrixField::identity(pair.fine.num_elements());
        let t = 2 * (4 + 1);
        let patch = pair.patch(t, 4).unwrap();
        let corr = solve_element_corrector(&pair, &patch, &field, &op).unwrap();
        let nodes = patch.interior_global_nodes();
        assert_eq!(nodes, pair.fine.interior_nodes());
        let s = dense_stiffness(&pair, &field, &nodes);
        let c = dense_constraints(&op, &nodes);
        let svd = c.transpose().svd(true, false);
        let u = svd.u.unwrap();
        let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10).count();
        assert_eq!(rank, c.nrows());
        // columns of u past the rank span ker C
        let mut sorted: Vec<usize> = (0..svd.singular_values.len()).collect();
        sorted.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let range: Vec<_> = sorted[..rank].iter().map(|&i| u.column(i).into_owned()).collect();
        let range = DMatrix::from_columns(&range);
        let proj = DMatrix::identity(nodes.len(), nodes.len()) - &range * range.transpose();
        let null = proj.svd(true, false).u.unwrap().columns(0, nodes.len() - rank).into_owned();
        for j in 0..2 {
            let mut r = DVector::zeros(nodes.len());
            for &k in pair.fine_elements_of(t) {
                let g = pair.fine.shape_gradients(k);
                for (v, gv) in pair.fine.element(k).iter().zip(&g) {
                    if let Ok(i) = nodes.binary_search(v) {
                        r[i] += pair.fine.area(k) * gv[j];
                    }
                }
            }
            let reduced = null.transpose() * &s * &null;
            let y = reduced.lu().solve(&(null.transpose() * r)).unwrap();
            let q = &null * y;
            let err = (0..nodes.len()).map(|i| (q[i] - corr.values[j][i]).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "direction {j}: {err}");
        }
    }

    #[test]
    fn saturated_basis_matches_global_constrained_minimizer() {
        let (pair, op) = setup(4, 16);
        let field = wavy(&pair);
        let m = crate::mesh::saturation_layers(&pair.coarse);
        let set = CorrectorSet::build(&pair, &op, &field, m, &[]).unwrap();
        let nodes = pair.fine.interior_nodes();
        let s = dense_stiffness(&pair, &field, &nodes);
        let c = dense_constraints(&op, &nodes);
        let (n, p) = (nodes.len(), c.nrows());
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&s);
        k.view_mut((n, 0), (p, n)).copy_from(&c);
        k.view_mut((0, n), (n, p)).copy_from(&c.transpose());
        let lu = k.lu();
        for d in 0..p {
            let mut rhs = DVector::zeros(n + p);
            rhs[n + d] = 1.0;
            let phi = lu.solve(&rhs).unwrap();
            let err = nodes.iter().enumerate().map(|(i, &g)| (phi[i] - set.basis().get(d, g)).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "basis {d}: {err}");
        }
    }

    #[test]
    fn kernel_support_and_interpolation_invariants() {
        let (pair, op) = setup(8, 32);
        let field = wavy(&pair);
        let set = CorrectorSet::build(&pair, &op, &field, 1, &[]).unwrap();
        let nf = pair.fine.num_nodes();
        for corr in set.correctors() {
            let patch = pair.patch(corr.element, 1).unwrap();
            assert_eq!(corr.nodes, patch.interior_global_nodes());
            for j in 0..2 {
                let q = corr.expand(j, nf);
                let iq = op.apply(&q);
                assert!(iq.iter().all(|v| v.abs() <= 1e-9));
            }
        }
        for d in 0..set.num_basis() {
            let mut e = vec![0.0; set.num_basis()];
            e[d] = 1.0;
            let ib = op.apply(&set.expand(&e));
            for (i, v) in ib.iter().enumerate() {
                let want = if i == d { 1.0 } else { 0.0 };
                assert!((v - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn scaling_the_coefficient_leaves_correctors_unchanged() {
        let (pair, op) = setup(4, 16);
        let field = wavy(&pair);
        let a = CorrectorSet::build(&pair, &op, &field, 1, &[]).unwrap();
        let b = CorrectorSet::build(&pair, &op, &field.scaled(7.3), 1, &[]).unwrap();
        for (x, y) in a.correctors().iter().zip(b.correctors()) {
            for (u, v) in x.values.iter().flatten().zip(y.values.iter().flatten()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn corrector_energy_is_bounded() {
        let (pair, op) = setup(4, 16);
        let field = wavy(&pair);
        let (lo, hi) = field.eigenvalue_bounds();
        let set = CorrectorSet::build(&pair, &op, &field, 2, &[]).unwrap();
        let area = pair.coarse.area(0);
        for c in set.correctors() {
            for j in 0..2 {
                let q = c.expand(j, pair.fine.num_nodes());
                let semi = h1_seminorm_sq(&pair.fine, &q).sqrt();
                assert!(semi <= hi / lo * area.sqrt() * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn global_corrector_is_linear_and_matches_basis() {
        let (pair, op) = setup(4, 16);
        let field = wavy(&pair);
        let set = CorrectorSet::build(&pair, &op, &field, 1, &[]).unwrap();
        let nd = set.num_basis();
        assert!(apply_global_corrector(&pair, &set, &vec![0.0; nd]).iter().all(|&v| v == 0.0));
        let u: Vec<f64> = (0..nd).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..nd).map(|i| (i as f64 * 1.91).cos()).collect();
        let (al, be) = (0.7, -2.3);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| al * a + be * b).collect();
        let lhs = apply_global_corrector(&pair, &set, &mix);
        let qu = apply_global_corrector(&pair, &set, &u);
        let qv = apply_global_corrector(&pair, &set, &v);
        for i in 0..lhs.len() {
            assert!((lhs[i] - al * qu[i] - be * qv[i]).abs() < 1e-12);
        }
        let hats = prolongation(&pair);
        let b = set.expand(&u);
        let lam = hats.transpose().mul_vec(&u);
        for i in 0..b.len() {
            assert!((lam[i] - qu[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reuse_skips_unchanged_patches() {
        let (pair, op) = setup(4, 16);
        let field = wavy(&pair);
        let first = CorrectorSet::build(&pair, &op, &field, 1, &[]).unwrap();
        assert_eq!(first.solve_count(), pair.coarse.num_elements());
        let again = CorrectorSet::build(&pair, &op, &field, 1, first.correctors()).unwrap();
        assert_eq!(again.solve_count(), 0);
        assert_eq!(again.correctors(), first.correctors());
        let mut changed = field.clone();
        changed.values_mut()[0][0][0] *= 2.0;
        let third = CorrectorSet::build(&pair, &op, &changed, 1, first.correctors()).unwrap();
        let touched = (0..pair.coarse.num_elements())
            .filter(|&t| pair.patch(t, 1).unwrap().fine_elements.contains(&0))
            .count();
        assert_eq!(third.solve_count(), touched);
    }

    #[test]
    fn parallel_build_is_deterministic() {
        let (pair, op) = setup(8, 32);
        let field = wavy(&pair);
        let a = CorrectorSet::build(&pair, &op, &field, 2, &[]).unwrap();
        let b = CorrectorSet::build(&pair, &op, &field, 2, &[]).unwrap();
        assert_eq!(a.correctors(), b.correctors());
        assert_eq!(a.basis(), b.basis());
    }

    #[test]
    fn decay_reaches_zero_at_saturation() {
        let (pair, op) = setup(4, 16);
        let field = MatrixField::identity(pair.fine.num_elements());
        let v: Vec<f64> = (0..9).map(|i| 1.0 + i as f64).collect();
        let m = crate::mesh::saturation_layers(&pair.coarse);
        let gaps = decay_study(&pair, &op, &field, &v, m + 1).unwrap();
        assert_eq!(gaps.len(), m);
        assert!(gaps[m - 1] == 0.0);
        assert!(gaps[0] > gaps[1]);
    }

    #[test]
    fn cache_round_trip() {
        let (pair, op) = setup(4, 16);
        let field = wavy(&pair);
        let set = CorrectorSet::build(&pair, &op, &field, 1, &[]).unwrap();
        let cache = CorrectorCache { coarse_divisions: 4, fine_divisions: 16, layers: 1, correctors: set.correctors().to_vec() };
        let mut bytes = Vec::new();
        cache.write_to(&mut bytes).unwrap();
        let back = CorrectorCache::<f64>::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, cache);
        assert!(back.matches(&pair, 1));
        assert!(CorrectorCache::<f32>::read_from(bytes.as_slice()).is_err());
        assert!(CorrectorCache::<f64>::read_from(&b"garbage!"[..]).is_err());
    }

    #[test]
    fn decay_rate_of_exact_geometric_sequence() {
        let gaps: Vec<f64> = (1..6).map(|m| 3.0 * 0.4f64.powi(m)).collect();
        assert!((decay_rate(&gaps).unwrap() - 0.4).abs() < 1e-12);
        assert!(decay_rate(&[1.0, 0.0]).is_none());
    }
}
