use crate::coefficients::{
    IdentityCoefficient, Nonlinearity, PeriodicCoefficient, QuasilinearCoefficient, RandomCheckerboard,
};
use crate::error::Result;
use crate::experiments::config::{ExperimentConfig, ProblemKind};
use crate::scalar::Vec2;

pub type Source = Box<dyn Fn(Vec2<f64>) -> f64 + Send + Sync>;

const BUMP_CENTER: [f64; 2] = [0.45, 0.5];

/// `scale * exp(-0.1 |x - x0|^2)` with `x0 = (0.45, 0.5)`.
pub fn gaussian_source(scale: f64) -> Source {
    Box::new(move |x| {
        let d = [x[0] - BUMP_CENTER[0], x[1] - BUMP_CENTER[1]];
        scale * (-0.1 * (d[0] * d[0] + d[1] * d[1])).exp()
    })
}

/// `low` below the line `x_2 = 0.1`, `high` above.
pub fn layered_source(low: f64, high: f64) -> Source {
    Box::new(move |x| if x[1] <= 0.1 { low } else { high })
}

/// Coefficient and source of one experiment.
pub struct ProblemSetup {
    pub coefficient: Box<dyn Nonlinearity<f64>>,
    pub source: Source,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<ProblemSetup> {
    let eps = cfg.epsilon();
    Ok(match cfg.problem {
        ProblemKind::PeriodicF1 => {
            ProblemSetup { coefficient: Box::new(PeriodicCoefficient::new(eps)), source: gaussian_source(10.0) }
        }
        ProblemKind::PeriodicF2 => {
            ProblemSetup { coefficient: Box::new(PeriodicCoefficient::new(eps)), source: gaussian_source(100.0) }
        }
        ProblemKind::Random => ProblemSetup {
            coefficient: Box::new(RandomCheckerboard::<f64>::new(eps, cfg.seed)?),
            source: layered_source(5.0, 50.0),
        },
        ProblemKind::Richards => ProblemSetup {
            coefficient: Box::new(QuasilinearCoefficient::<f64>::richards(eps, cfg.channel)?),
            source: layered_source(0.1, 1.0),
        },
        ProblemKind::LinearSanity => ProblemSetup { coefficient: Box::new(IdentityCoefficient), source: Box::new(|_| 1.0) },
    })
}
