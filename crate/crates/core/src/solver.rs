//! Newton solvers for the fine reference problem, coarse FEM and the two LOD
//! variants, plus the linearization-point strategies that tie correctors to
//! solves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{linearize, LinearizationModel, MonotonicityReport, Nonlinearity};
use crate::corrector::CorrectorSet;
use crate::error::{LodError, Result};
use crate::fem::{assemble_load, h1_seminorm_sq, AssemblyPattern, DofMap};
use crate::interpolation::{prolongation, InterpolationOperator};
use crate::linalg::{norm2, DenseMatrix, Factorization, SparseOperator};
use crate::mesh::{NestedPair, TriMesh};
use crate::scalar::{dot2, mat_vec2, Scalar, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Absolute tolerance on the Euclidean norm of the residual vector.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { residual_tolerance: 1e-11, max_iterations: 100 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(LodError::Config("Newton tolerance must be positive and max_iterations at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult<T> {
    /// Fine nodal vector of the computed solution (coarse FE function for
    /// Petrov-Galerkin and coarse FEM).
    pub solution: Vec<T>,
    /// Coefficients with respect to the trial basis (empty for the fine solve).
    pub coarse: Vec<T>,
    /// Fine nodal vector of the multiscale function `sum_z c_z basis_z`; equals
    /// `solution` for Galerkin LOD and the fine solve.
    pub upscaled: Vec<T>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub strategy_label: String,
}

/// Plain Newton: `x <- x - J(x)^{-1} r(x)` until `|r| <= tol`.
fn newton<T: Scalar>(
    mut x: Vec<T>,
    cfg: &NewtonConfig,
    residual: impl Fn(&[T]) -> Result<Vec<T>>,
    correction: impl Fn(&[T], &[T]) -> Result<Vec<T>>,
) -> Result<(Vec<T>, usize, Vec<f64>)> {
    cfg.validate()?;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = residual(&x)?;
        let norm = norm2(&r).to_f64_lossy();
        if !norm.is_finite() {
            return Err(LodError::NonFinite(format!("Newton residual at iteration {iterations}")));
        }
        history.push(norm);
        log::debug!("newton iteration {iterations}: residual {norm:e}");
        if norm <= cfg.residual_tolerance {
            return Ok((x, iterations, history));
        }
        if iterations == cfg.max_iterations {
            return Err(LodError::NonConvergence { iterations, residual: norm });
        }
        let dx = correction(&x, &r)?;
        x.iter_mut().zip(&dx).for_each(|(a, &d)| *a -= d);
        iterations += 1;
    }
}

/// Fine-scale nonlinear operator `u -> (sum_K |K| A(x_K, u_K, grad u_K) . grad phi_i)_i`
/// with one-point quadrature at barycenters.
pub struct FineOperator<'a, T> {
    mesh: &'a TriMesh<T>,
    coefficient: &'a dyn Nonlinearity<T>,
    pattern: AssemblyPattern,
}

impl<'a, T: Scalar> FineOperator<'a, T> {
    pub fn new(mesh: &'a TriMesh<T>, coefficient: &'a dyn Nonlinearity<T>) -> Self {
        Self { mesh, coefficient, pattern: AssemblyPattern::new(mesh) }
    }

    fn element_state(&self, e: usize, u: &[T]) -> (Vec2<T>, T, Vec2<T>) {
        let third = T::one() / T::lit(3.0);
        let el = self.mesh.element(e);
        (self.mesh.barycenter(e), (u[el[0]] + u[el[1]] + u[el[2]]) * third, self.mesh.gradient(e, u))
    }

    /// Node-indexed internal force vector.
    pub fn force(&self, u: &[T]) -> Vec<T> {
        let local: Vec<[T; 3]> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let (x, ue, xi) = self.element_state(e, u);
                let a = self.coefficient.flux(x, ue, xi);
                let area = self.mesh.area(e);
                self.mesh.shape_gradients(e).map(|g| area * dot2(a, g))
            })
            .collect();
        let mut out = vec![T::zero(); self.mesh.num_nodes()];
        for (e, vals) in local.iter().enumerate() {
            for (n, v) in self.mesh.element(e).iter().zip(vals) {
                out[*n] += *v;
            }
        }
        out
    }

    /// Node-indexed Jacobian of [`Self::force`]; row `i` is the test function.
    pub fn jacobian(&self, u: &[T]) -> SparseOperator<T> {
        let third = T::one() / T::lit(3.0);
        let local: Vec<[[T; 3]; 3]> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let (x, ue, xi) = self.element_state(e, u);
                let d = self.coefficient.jacobian(x, ue, xi);
                let du = self.coefficient.value_derivative(x, ue, xi);
                let g = self.mesh.shape_gradients(e);
                let area = self.mesh.area(e);
                let mut k = [[T::zero(); 3]; 3];
                for a in 0..3 {
                    let dua = dot2(du, g[a]) * third;
                    for b in 0..3 {
                        k[a][b] = area * (dot2(mat_vec2(&d, g[b]), g[a]) + dua);
                    }
                }
                k
            })
            .collect();
        self.pattern
            .assemble(|e| local[e])
            .with_symmetry(!self.coefficient.depends_on_value())
    }
}

/// Standard P1 FEM on `mesh` with Newton's method from a zero initial guess.
pub fn solve_fem<T: Scalar>(
    mesh: &TriMesh<T>,
    coefficient: &dyn Nonlinearity<T>,
    load: &[T],
    cfg: &NewtonConfig,
) -> Result<SolveResult<T>> {
    let op = FineOperator::new(mesh, coefficient);
    let dofs = DofMap::of_mesh(mesh);
    let b = dofs.restrict(load);
    let residual = |x: &[T]| -> Result<Vec<T>> {
        let g = dofs.restrict(&op.force(&dofs.expand(x)));
        Ok(g.iter().zip(&b).map(|(&a, &c)| a - c).collect())
    };
    let correction = |x: &[T], r: &[T]| -> Result<Vec<T>> {
        let j = dofs.restrict_operator(&op.jacobian(&dofs.expand(x)));
        Ok(Factorization::new(&j)?.solve(r))
    };
    let (x, iterations, residual_history) = newton(vec![T::zero(); dofs.num_dofs()], cfg, residual, correction)?;
    let solution = dofs.expand(&x);
    Ok(SolveResult {
        upscaled: solution.clone(),
        solution,
        coarse: x,
        iterations,
        residual_history,
        strategy_label: "fem".into(),
    })
}

pub fn solve_fine_reference<T: Scalar>(
    mesh: &TriMesh<T>,
    coefficient: &dyn Nonlinearity<T>,
    f: &(dyn Fn(Vec2<T>) -> T + Sync),
    cfg: &NewtonConfig,
) -> Result<SolveResult<T>> {
    let load = assemble_load(mesh, f)?;
    let mut out = solve_fem(mesh, coefficient, &load, cfg)?;
    out.coarse.clear();
    out.strategy_label = "reference".into();
    Ok(out)
}

/// Coarse FEM solution, returned as a coarse nodal vector in `coarse` (dof
/// values) and embedded into the fine mesh in `solution`.
pub fn solve_coarse_fem<T: Scalar>(
    pair: &NestedPair<T>,
    coefficient: &dyn Nonlinearity<T>,
    f: &(dyn Fn(Vec2<T>) -> T + Sync),
    cfg: &NewtonConfig,
) -> Result<SolveResult<T>> {
    let load = assemble_load(&pair.coarse, f)?;
    let mut out = solve_fem(&pair.coarse, coefficient, &load, cfg)?;
    let embedded = prolongation(pair).transpose().mul_vec(&out.coarse);
    out.solution = embedded.clone();
    out.upscaled = embedded;
    out.strategy_label = "coarse_fem".into();
    Ok(out)
}

fn to_dense<T: Scalar>(op: &SparseOperator<T>) -> DenseMatrix<T> {
    let mut d = DenseMatrix::zeros(op.nrows(), op.ncols());
    for i in 0..op.nrows() {
        let (cols, vals) = op.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            d.set(i, c, v);
        }
    }
    d
}

/// Newton on coarse coefficients `c`: the trial function is `trial^T c`,
/// tests are the multiscale basis.
fn solve_lod<T: Scalar>(
    fine: &TriMesh<T>,
    coefficient: &dyn Nonlinearity<T>,
    fine_load: &[T],
    basis: &SparseOperator<T>,
    trial_transpose: &SparseOperator<T>,
    cfg: &NewtonConfig,
) -> Result<(Vec<T>, usize, Vec<f64>)> {
    let op = FineOperator::new(fine, coefficient);
    let b = basis.mul_vec(fine_load);
    let residual = |c: &[T]| -> Result<Vec<T>> {
        let g = basis.mul_vec(&op.force(&trial_transpose.mul_vec(c)));
        Ok(g.iter().zip(&b).map(|(&a, &l)| a - l).collect())
    };
    let correction = |c: &[T], r: &[T]| -> Result<Vec<T>> {
        let j = op.jacobian(&trial_transpose.mul_vec(c));
        let coarse = basis.matmul(&j.matmul(trial_transpose)?)?;
        to_dense(&coarse).solve(r)
    };
    newton(vec![T::zero(); basis.nrows()], cfg, residual, correction)
}

/// Galerkin LOD: trial and test space are both spanned by the multiscale basis.
pub fn solve_lod_galerkin<T: Scalar>(
    pair: &NestedPair<T>,
    coefficient: &dyn Nonlinearity<T>,
    fine_load: &[T],
    correctors: &CorrectorSet<T>,
    cfg: &NewtonConfig,
) -> Result<SolveResult<T>> {
    let (c, iterations, residual_history) =
        solve_lod(&pair.fine, coefficient, fine_load, correctors.basis(), correctors.basis_transpose(), cfg)?;
    let solution = correctors.expand(&c);
    Ok(SolveResult {
        upscaled: solution.clone(),
        solution,
        coarse: c,
        iterations,
        residual_history,
        strategy_label: "galerkin".into(),
    })
}

/// Petrov-Galerkin LOD: coarse P1 trial functions, multiscale test functions.
pub fn solve_lod_petrov_galerkin<T: Scalar>(
    pair: &NestedPair<T>,
    coefficient: &dyn Nonlinearity<T>,
    fine_load: &[T],
    correctors: &CorrectorSet<T>,
    cfg: &NewtonConfig,
) -> Result<SolveResult<T>> {
    let hats_t = prolongation(pair).transpose();
    let (c, iterations, residual_history) =
        solve_lod(&pair.fine, coefficient, fine_load, correctors.basis(), &hats_t, cfg)?;
    Ok(SolveResult {
        solution: hats_t.mul_vec(&c),
        upscaled: correctors.expand(&c),
        coarse: c,
        iterations,
        residual_history,
        strategy_label: "petrov_galerkin".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Galerkin,
    PetrovGalerkin,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Galerkin => "galerkin",
            Method::PetrovGalerkin => "petrov_galerkin",
        }
    }
}

/// Where the linearization point of the corrector coefficient comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind<T> {
    Zero,
    CoarseFem,
    /// Caller-supplied fine nodal vector.
    GivenVector { label: String, u_star: Vec<T> },
    /// Repeated corrector rebuild and solve, each round linearizing at the
    /// previous multiscale solution.
    Cascade(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationStrategy<T> {
    pub kind: StrategyKind<T>,
    pub model: LinearizationModel,
}

impl<T: Scalar> LinearizationStrategy<T> {
    pub fn label(&self) -> String {
        match &self.kind {
            StrategyKind::Zero => "zero".into(),
            StrategyKind::CoarseFem => "coarse_fem".into(),
            StrategyKind::GivenVector { label, .. } => format!("given:{label}"),
            StrategyKind::Cascade(k) => format!("cascade:{k}"),
        }
    }
}

/// Everything one LOD solve needs besides the strategy.
pub struct LodProblem<'a, T: Scalar> {
    pub pair: &'a NestedPair<T>,
    pub interpolation: &'a InterpolationOperator<T>,
    pub coefficient: &'a dyn Nonlinearity<T>,
    pub source: &'a (dyn Fn(Vec2<T>) -> T + Sync),
    pub fine_load: Vec<T>,
    pub layers: usize,
    pub method: Method,
    pub newton: NewtonConfig,
}

impl<'a, T: Scalar> LodProblem<'a, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pair: &'a NestedPair<T>,
        interpolation: &'a InterpolationOperator<T>,
        coefficient: &'a dyn Nonlinearity<T>,
        source: &'a (dyn Fn(Vec2<T>) -> T + Sync),
        layers: usize,
        method: Method,
        newton: NewtonConfig,
    ) -> Result<Self> {
        let fine_load = assemble_load(&pair.fine, source)?;
        Ok(Self { pair, interpolation, coefficient, source, fine_load, layers, method, newton })
    }

    pub fn solve_with(&self, correctors: &CorrectorSet<T>) -> Result<SolveResult<T>> {
        match self.method {
            Method::Galerkin => solve_lod_galerkin(self.pair, self.coefficient, &self.fine_load, correctors, &self.newton),
            Method::PetrovGalerkin => {
                solve_lod_petrov_galerkin(self.pair, self.coefficient, &self.fine_load, correctors, &self.newton)
            }
        }
    }

    /// Correctors for the coefficient linearized at `u_star`, reusing matching
    /// entries of `reuse`.
    pub fn correctors_at(
        &self,
        model: LinearizationModel,
        u_star: &[T],
        reuse: Option<&CorrectorSet<T>>,
    ) -> Result<CorrectorSet<T>> {
        let lin = linearize(self.coefficient, model, &self.pair.fine, u_star)?;
        let reuse = reuse.map_or(&[][..], |s| s.correctors());
        CorrectorSet::build(self.pair, self.interpolation, &lin.matrix, self.layers, reuse)
    }
}

/// One linearization round of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceEntry {
    pub round: usize,
    pub u_star: String,
    pub u_star_digest: String,
    pub u_star_h1: f64,
    pub corrector_digest: String,
    pub corrector_solves: usize,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome<T> {
    pub result: SolveResult<T>,
    pub correctors: CorrectorSet<T>,
    pub provenance: Vec<ProvenanceEntry>,
    /// Coarse FEM solve performed by the `coarse_fem` strategy.
    pub coarse_fem: Option<SolveResult<T>>,
    /// Patch solves summed over all rounds.
    pub corrector_solves: usize,
}

fn vector_digest<T: Scalar>(v: &[T]) -> String {
    let mut h = Sha256::new();
    for x in v {
        h.update(x.to_f64_lossy().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Runs `strategy`: builds correctors at the selected linearization point(s)
/// and solves the LOD problem with them.
pub fn run_strategy<T: Scalar>(
    problem: &LodProblem<'_, T>,
    strategy: &LinearizationStrategy<T>,
) -> Result<StrategyOutcome<T>> {
    let fine = &problem.pair.fine;
    let zero = vec![T::zero(); fine.num_nodes()];
    let mut coarse_fem = None;
    let (first_label, first_point, rounds) = match &strategy.kind {
        StrategyKind::Zero => ("zero".to_string(), zero, 1),
        StrategyKind::CoarseFem => {
            let uh = solve_coarse_fem(problem.pair, problem.coefficient, problem.source, &problem.newton)?;
            let p = uh.solution.clone();
            coarse_fem = Some(uh);
            ("coarse_fem".to_string(), p, 1)
        }
        StrategyKind::GivenVector { label, u_star } => {
            if u_star.len() != fine.num_nodes() {
                return Err(LodError::DimensionMismatch(format!(
                    "linearization point of length {} for {} fine nodes",
                    u_star.len(),
                    fine.num_nodes()
                )));
            }
            (label.clone(), u_star.clone(), 1)
        }
        StrategyKind::Cascade(k) => {
            if *k == 0 {
                return Err(LodError::Config("cascade needs at least one round".into()));
            }
            ("zero".to_string(), zero, *k)
        }
    };
    let mut provenance = Vec::with_capacity(rounds);
    let mut label = first_label;
    let mut point = first_point;
    let mut previous: Option<CorrectorSet<T>> = None;
    let mut total = 0;
    for round in 1..=rounds {
        let set = problem.correctors_at(strategy.model, &point, previous.as_ref())?;
        total += set.solve_count();
        let mut result = problem.solve_with(&set)?;
        result.strategy_label = strategy.label();
        provenance.push(ProvenanceEntry {
            round,
            u_star: label.clone(),
            u_star_digest: vector_digest(&point),
            u_star_h1: h1_seminorm_sq(fine, &point).sqrt().to_f64_lossy(),
            corrector_digest: hex::encode(set.digest()),
            corrector_solves: set.solve_count(),
            newton_iterations: result.iterations,
        });
        if round == rounds {
            return Ok(StrategyOutcome { result, correctors: set, provenance, coarse_fem, corrector_solves: total });
        }
        point = result.upscaled;
        label = format!("lod_round_{round}");
        previous = Some(set);
    }
    unreachable!("strategy loop returns on its last round")
}

/// Checks `r_{k+1} <= c r_k^2` on the last three residuals. Residuals below
/// `1e3 * eps * r_0` are at the roundoff floor and count as satisfied.
pub fn quadratic_tail(history: &[f64], c: f64) -> bool {
    if history.len() < 3 {
        return true;
    }
    let floor = 1e3 * f64::EPSILON * history[0];
    history[history.len() - 3..].windows(2).all(|w| w[1] <= c * w[0] * w[0] || w[1] <= floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub seminorm: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `||f||_0` with barycenter quadrature on `mesh`.
pub fn source_l2_norm<T: Scalar>(mesh: &TriMesh<T>, f: &dyn Fn(Vec2<T>) -> T) -> f64 {
    (0..mesh.num_elements())
        .map(|e| {
            let v = f(mesh.barycenter(e)).to_f64_lossy();
            mesh.area(e).to_f64_lossy() * v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Compares `|u|_1` with `(Lambda/lambda) ||f||_0` using sampled constants.
/// A failing check is logged, never raised.
pub fn stability_check<T: Scalar>(
    mesh: &TriMesh<T>,
    solution: &[T],
    probe: &MonotonicityReport,
    source_norm: f64,
) -> StabilityReport {
    let seminorm = h1_seminorm_sq(mesh, solution).sqrt().to_f64_lossy();
    let bound = probe.big_lambda / probe.lambda * source_norm;
    let pass = seminorm <= bound * (1.0 + 1e-12);
    if !pass {
        log::warn!("stability bound violated: |u|_1 = {seminorm:e} > {bound:e}");
    }
    StabilityReport { seminorm, bound, pass }
}
