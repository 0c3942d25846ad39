use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coefficients::{ChannelGeometry, LinearizationModel};
use crate::error::{LodError, Result};
use crate::solver::{Method, NewtonConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    PeriodicF1,
    PeriodicF2,
    Random,
    Richards,
    LinearSanity,
}

impl ProblemKind {
    pub fn label(self) -> &'static str {
        match self {
            ProblemKind::PeriodicF1 => "periodic_f1",
            ProblemKind::PeriodicF2 => "periodic_f2",
            ProblemKind::Random => "random",
            ProblemKind::Richards => "richards",
            ProblemKind::LinearSanity => "linear_sanity",
        }
    }
}

/// Choice of linearization point for the corrector coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySpec {
    /// `u* = 0`.
    Zero,
    /// `u*` = coarse FEM solution.
    CoarseFem,
    /// `u*` = multiscale solution of the zero strategy.
    LodSolution,
    /// `u*` = `I_H` of the multiscale solution of the zero strategy.
    InterpolatedLodSolution,
    /// `cascade_steps` rounds, each linearized at the previous multiscale solution.
    Cascade,
}

impl StrategySpec {
    pub fn label(self, cascade_steps: usize) -> String {
        match self {
            StrategySpec::Zero => "zero".into(),
            StrategySpec::CoarseFem => "coarse_fem".into(),
            StrategySpec::LodSolution => "lod_solution".into(),
            StrategySpec::InterpolatedLodSolution => "interpolated_lod_solution".into(),
            StrategySpec::Cascade => format!("cascade:{cascade_steps}"),
        }
    }
}

fn default_problem() -> ProblemKind {
    ProblemKind::PeriodicF1
}
fn default_epsilon_exponent() -> u32 {
    4
}
fn default_h_exponent() -> u32 {
    6
}
fn default_coarse_exponents() -> Vec<u32> {
    vec![2, 3, 4, 5]
}
fn default_m_values() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_method() -> Method {
    Method::Galerkin
}
fn default_strategy() -> StrategySpec {
    StrategySpec::Zero
}
fn default_cascade_steps() -> usize {
    2
}
fn default_model() -> LinearizationModel {
    LinearizationModel::Newton
}

/// Experiment description, read from TOML. Mesh sizes are given as exponents:
/// `h = 2^-h_exponent`, `H = 2^-k` for `k` in `coarse_exponents`,
/// `epsilon = 2^-epsilon_exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_problem")]
    pub problem: ProblemKind,
    #[serde(default = "default_epsilon_exponent")]
    pub epsilon_exponent: u32,
    /// Seed of the random coefficient; required so that every run is reproducible.
    pub seed: u64,
    #[serde(default = "default_h_exponent")]
    pub h_exponent: u32,
    #[serde(default = "default_coarse_exponents")]
    pub coarse_exponents: Vec<u32>,
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_strategy")]
    pub strategy: StrategySpec,
    #[serde(default = "default_cascade_steps")]
    pub cascade_steps: usize,
    #[serde(default = "default_model")]
    pub model: LinearizationModel,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Fill the `wall_times` column; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub channel: ChannelGeometry,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `problem`.
    pub fn desk(problem: ProblemKind, seed: u64) -> Self {
        Self {
            problem,
            epsilon_exponent: default_epsilon_exponent(),
            seed,
            h_exponent: default_h_exponent(),
            coarse_exponents: default_coarse_exponents(),
            m_values: default_m_values(),
            method: default_method(),
            strategy: default_strategy(),
            cascade_steps: default_cascade_steps(),
            model: default_model(),
            output_path: None,
            record_timings: false,
            newton: NewtonConfig::default(),
            channel: ChannelGeometry::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LodError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("validated configs are representable as TOML")
    }

    pub fn epsilon(&self) -> f64 {
        0.5f64.powi(self.epsilon_exponent as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LodError::Config(m));
        if self.coarse_exponents.is_empty() || self.m_values.is_empty() {
            return bad("coarse_exponents and m_values must be non-empty".into());
        }
        if self.h_exponent > 12 {
            return bad(format!("h_exponent {} is beyond what this code is meant for", self.h_exponent));
        }
        if let Some(&k) = self.coarse_exponents.iter().find(|&&k| k < 1 || k >= self.h_exponent) {
            return bad(format!("coarse exponent {k} must satisfy 1 <= k < h_exponent = {}", self.h_exponent));
        }
        if self.m_values.contains(&0) {
            return bad("oversampling layers must be at least 1".into());
        }
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.epsilon_exponent < 1 {
            return bad("epsilon_exponent must be at least 1".into());
        }
        if self.strategy == StrategySpec::Cascade && self.cascade_steps == 0 {
            return bad("cascade_steps must be at least 1".into());
        }
        if !(self.channel.contrast > 0.0) {
            return bad("channel contrast must be positive".into());
        }
        self.newton.validate()
    }
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub problem: Option<ProblemKind>,
    pub h_exponent: Option<u32>,
    pub coarse_exponents: Option<Vec<u32>>,
    pub epsilon_exponent: Option<u32>,
    pub m_values: Option<Vec<usize>>,
    pub method: Option<Method>,
    pub strategy: Option<StrategySpec>,
    pub cascade_steps: Option<usize>,
    pub model: Option<LinearizationModel>,
    pub seed: Option<u64>,
    pub output_path: Option<PathBuf>,
    pub record_timings: Option<bool>,
}

impl Overrides {
    pub fn apply(self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(problem, h_exponent, coarse_exponents, epsilon_exponent, m_values, method, strategy, cascade_steps, model, seed, record_timings);
        if let Some(p) = self.output_path {
            cfg.output_path = Some(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_desk_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 7\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::desk(ProblemKind::PeriodicF1, 7));
        assert_eq!(cfg.epsilon(), 1.0 / 16.0);
    }

    #[test]
    fn round_trip_and_sections() {
        let text = r#"
problem = "richards"
seed = 3
h_exponent = 5
coarse_exponents = [2, 3]
m_values = [2]
method = "petrov_galerkin"
strategy = "cascade"
cascade_steps = 3
model = "kacanov"

[newton]
residual_tolerance = 1e-10

[channel]
contrast = 50.0
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.newton.max_iterations, 100);
        assert_eq!(cfg.channel.contrast, 50.0);
        assert_eq!(cfg.strategy.label(cfg.cascade_steps), "cascade:3");
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "h_exponent = 5\n",
            "seed = 1\nh_exponent = 4\ncoarse_exponents = [4]\n",
            "seed = 1\nm_values = [0]\n",
            "seed = 1\nunknown = 2\n",
            "seed = 1\nstrategy = \"cascade\"\ncascade_steps = 0\n",
            "seed = 1\n[newton]\nresidual_tolerance = -1.0\n",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_replace_fields() {
        let cfg = ExperimentConfig::desk(ProblemKind::PeriodicF1, 0);
        let o = Overrides { m_values: Some(vec![3]), seed: Some(9), ..Default::default() };
        let cfg = o.apply(cfg).unwrap();
        assert_eq!((cfg.m_values.clone(), cfg.seed), (vec![3], 9));
        let o = Overrides { h_exponent: Some(3), ..Default::default() };
        assert!(o.apply(cfg).is_err());
    }
}
