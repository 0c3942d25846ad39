use std::time::Instant;

use crate::error::{LodError, Result};
use crate::experiments::config::{ExperimentConfig, StrategySpec};
use crate::experiments::problems::build_problem;
use crate::experiments::report::{ExperimentReport, ReportRow, RowProvenance};
use crate::indicators::ErrorMeasures;
use crate::interpolation::compose_interpolation;
use crate::mesh::{NestedPair, TriMesh};
use crate::solver::{
    run_strategy, solve_coarse_fem, solve_fine_reference, LinearizationStrategy, LodProblem, Method, SolveResult,
    StrategyKind,
};

struct Timer {
    enabled: bool,
    parts: Vec<String>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        Self { enabled, parts: Vec::new() }
    }

    fn time<R>(&mut self, name: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        if self.enabled {
            self.parts.push(format!("{name}={:.3}", start.elapsed().as_secs_f64()));
        }
        out
    }

    fn render(&self) -> String {
        if self.enabled {
            self.parts.join(";")
        } else {
            "-".into()
        }
    }
}

/// Outcome of one `(H, m)` row before it is flattened into the CSV.
struct RowOutcome {
    result: SolveResult<f64>,
    provenance: Vec<crate::solver::ProvenanceEntry>,
    newton_iterations: usize,
    corrector_solves: usize,
}

fn solve_row(
    cfg: &ExperimentConfig,
    measures: &ErrorMeasures<'_, f64>,
    problem: &LodProblem<'_, f64>,
) -> Result<RowOutcome> {
    let strategy = |kind| LinearizationStrategy { kind, model: cfg.model };
    let given = |interpolated: bool| -> Result<(StrategyKind<f64>, usize, usize)> {
        let first = run_strategy(problem, &strategy(StrategyKind::Zero))?;
        let (label, u_star) = if interpolated {
            ("interpolated_lod_solution", measures.interpolate(&first.result.upscaled))
        } else {
            ("lod_solution", first.result.upscaled)
        };
        Ok((StrategyKind::GivenVector { label: label.into(), u_star }, first.result.iterations, first.corrector_solves))
    };
    let (kind, extra_iterations, extra_solves) = match cfg.strategy {
        StrategySpec::Zero => (StrategyKind::Zero, 0, 0),
        StrategySpec::CoarseFem => (StrategyKind::CoarseFem, 0, 0),
        StrategySpec::Cascade => (StrategyKind::Cascade(cfg.cascade_steps), 0, 0),
        StrategySpec::LodSolution => given(false)?,
        StrategySpec::InterpolatedLodSolution => given(true)?,
    };
    let outcome = run_strategy(problem, &strategy(kind))?;
    let newton_iterations = extra_iterations + outcome.provenance.iter().map(|p| p.newton_iterations).sum::<usize>();
    Ok(RowOutcome {
        newton_iterations,
        corrector_solves: extra_solves + outcome.corrector_solves,
        result: outcome.result,
        provenance: outcome.provenance,
    })
}

/// Runs the convergence study described by `cfg`. Failures inside one
/// `(H, m)` row are recorded in that row's status; only a failing reference
/// solve aborts the whole run. Writes the report when `output_path` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let setup = build_problem(cfg)?;
    let fine = TriMesh::<f64>::new(1 << cfg.h_exponent)?;
    let mut ref_timer = Timer::new(cfg.record_timings);
    let reference = ref_timer.time("reference", || {
        solve_fine_reference(&fine, setup.coefficient.as_ref(), setup.source.as_ref(), &cfg.newton)
    })?;
    log::info!("reference solve: {} Newton iterations", reference.iterations);

    let problem_label = cfg.problem.label().to_string();
    let strategy_label = cfg.strategy.label(cfg.cascade_steps);
    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for &k in &cfg.coarse_exponents {
        let coarse_h = 0.5f64.powi(k as i32);
        let blank = |m: usize, status: String| ReportRow {
            problem: problem_label.clone(),
            coarse_h,
            m,
            method: cfg.method.label().into(),
            strategy: strategy_label.clone(),
            e_h: None,
            e_lod: None,
            best_l2: None,
            newton_iterations_fine: Some(reference.iterations),
            newton_iterations_coarse: None,
            corrector_solve_count: None,
            wall_times: "-".into(),
            fem_e_h: None,
            fem_e_lod: None,
            status,
        };
        let prepared = (|| -> Result<_> {
            let coarse = TriMesh::new(1 << k)?;
            let pair = NestedPair::from_meshes(coarse, fine.clone())?;
            let interpolation = compose_interpolation(&pair)?;
            Ok((pair, interpolation))
        })();
        let (pair, interpolation) = match prepared {
            Ok(p) => p,
            Err(e) => {
                rows.extend(cfg.m_values.iter().map(|&m| blank(m, format!("error: {e}"))));
                continue;
            }
        };
        let measures = ErrorMeasures::new(&pair, &interpolation)?;
        let best_l2 = measures.best_l2_approximation(&reference.solution).map(|b| b.1).ok();
        let fem = solve_coarse_fem(&pair, setup.coefficient.as_ref(), setup.source.as_ref(), &cfg.newton).and_then(|u| {
            Ok((measures.e_h(&reference.solution, &u.solution, true)?, measures.relative_h1(&reference.solution, &u.solution)?))
        });
        if let Err(e) = &fem {
            log::warn!("coarse FEM at H = {coarse_h} failed: {e}");
        }
        for &m in &cfg.m_values {
            let mut timer = Timer::new(cfg.record_timings);
            let outcome = timer.time("row", || -> Result<_> {
                let problem = LodProblem::new(
                    &pair,
                    &interpolation,
                    setup.coefficient.as_ref(),
                    setup.source.as_ref(),
                    m,
                    cfg.method,
                    cfg.newton,
                )?;
                let out = solve_row(cfg, &measures, &problem)?;
                let e_lod = measures.relative_h1(&reference.solution, &out.result.upscaled)?;
                let e_h = measures.e_h(&reference.solution, &out.result.solution, cfg.method == Method::PetrovGalerkin)?;
                Ok((out, e_h, e_lod))
            });
            let mut row = blank(m, "ok".into());
            row.best_l2 = best_l2;
            if let Ok((a, b)) = &fem {
                row.fem_e_h = Some(*a);
                row.fem_e_lod = Some(*b);
            }
            match outcome {
                Ok((out, e_h, e_lod)) => {
                    row.e_h = Some(e_h);
                    row.e_lod = Some(e_lod);
                    row.newton_iterations_coarse = Some(out.newton_iterations);
                    row.corrector_solve_count = Some(out.corrector_solves);
                    log::info!("H = {coarse_h}, m = {m}: e_H = {e_h:e}, e_LOD = {e_lod:e}");
                    provenance.push(RowProvenance { coarse_h, m, rounds: out.provenance });
                }
                Err(e) => {
                    log::warn!("row H = {coarse_h}, m = {m} failed: {e}");
                    row.status = format!("error: {e}");
                }
            }
            if cfg.record_timings {
                row.wall_times = format!("{};{}", ref_timer.render(), timer.render());
            }
            rows.push(row);
        }
    }
    let report = ExperimentReport { config: cfg.clone(), rows, provenance };
    if let Some(path) = &cfg.output_path {
        report.write(path)?;
    }
    Ok(report)
}

/// Reference solution and its mesh, for callers that post-process it.
pub fn reference_solution(cfg: &ExperimentConfig) -> Result<(TriMesh<f64>, SolveResult<f64>)> {
    let setup = build_problem(cfg)?;
    let fine = TriMesh::<f64>::new(1 << cfg.h_exponent)?;
    let r = solve_fine_reference(&fine, setup.coefficient.as_ref(), setup.source.as_ref(), &cfg.newton)?;
    if r.solution.iter().all(|&v| v == 0.0) {
        return Err(LodError::ZeroReferenceNorm);
    }
    Ok((fine, r))
}
