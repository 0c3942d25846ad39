use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lod_core::coefficients::{linearize, monotonicity_probe, LinearizationModel};
use lod_core::corrector::{decay_rate, decay_study, CorrectorSet};
use lod_core::experiments::report::write_atomic;
use lod_core::experiments::runner::reference_solution;
use lod_core::experiments::{build_problem, run_experiment, ExperimentConfig, Overrides, ProblemKind, StrategySpec};
use lod_core::indicators::compute_indicators;
use lod_core::interpolation::compose_interpolation;
use lod_core::solver::Method;
use lod_core::{CorrectorCache, LodError, Mesh, MeshPair, Result};

#[derive(Parser)]
#[command(name = "lod", version, about = "Linearized localized orthogonal decomposition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study over (H, m) described by a TOML config.
    Run(RunArgs),
    /// Sampled monotonicity / Lipschitz constants of a problem's coefficient.
    Probe(ProbeArgs),
    /// Gaps |(Q_mmax - Q_m) v_H|_1 for random coarse functions.
    Decay(DecayArgs),
    /// Per-element corrector-perturbation indicator as CSV.
    Indicator(IndicatorArgs),
    /// Plain-text node/element listing of a uniform mesh.
    Mesh {
        #[arg(long)]
        divisions: usize,
    },
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

/// Problem selection shared by all subcommands; flags override the config file.
#[derive(Args)]
struct ProblemArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<ProblemKind>)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon_exponent: Option<u32>,
    #[arg(long)]
    h_exponent: Option<u32>,
}

impl ProblemArgs {
    fn base(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::from_file(path),
            None => {
                let seed =
                    self.seed.ok_or_else(|| LodError::Config("either --config or --seed is required".into()))?;
                Ok(ExperimentConfig::desk(ProblemKind::PeriodicF1, seed))
            }
        }
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            problem: self.problem,
            seed: self.seed,
            epsilon_exponent: self.epsilon_exponent,
            h_exponent: self.h_exponent,
            ..Default::default()
        }
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        self.overrides().apply(self.base()?)
    }

    /// Config for a single coarse level.
    fn resolve_at(&self, coarse_exponent: u32) -> Result<ExperimentConfig> {
        Overrides { coarse_exponents: Some(vec![coarse_exponent]), ..self.overrides() }.apply(self.base()?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Coarse exponents k (H = 2^-k), comma separated.
    #[arg(long, value_delimiter = ',')]
    coarse_exponents: Option<Vec<u32>>,
    /// Oversampling layers, comma separated.
    #[arg(long = "m", value_delimiter = ',')]
    m_values: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_enum::<Method>)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_enum::<StrategySpec>)]
    strategy: Option<StrategySpec>,
    #[arg(long)]
    cascade_steps: Option<usize>,
    #[arg(long, value_parser = parse_enum::<LinearizationModel>)]
    model: Option<LinearizationModel>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Fill the wall_times column.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Radius of the sampled gradient disk.
    #[arg(long, default_value_t = 10.0)]
    cap: f64,
}

#[derive(Args)]
struct DecayArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 3)]
    coarse_exponent: u32,
    #[arg(long, default_value_t = 5)]
    max_layers: usize,
    /// Number of random coarse functions.
    #[arg(long, default_value_t = 5)]
    samples: usize,
}

#[derive(Args)]
struct IndicatorArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 3)]
    coarse_exponent: u32,
    #[arg(long = "m", default_value_t = 2)]
    layers: usize,
    /// Binary corrector cache; matching correctors are reused, then the file is refreshed.
    #[arg(long)]
    corrector_cache: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn pair_for(cfg: &ExperimentConfig, coarse_exponent: u32) -> Result<MeshPair> {
    MeshPair::new(1 << coarse_exponent, 1 << cfg.h_exponent)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let o = Overrides {
        coarse_exponents: args.coarse_exponents,
        m_values: args.m_values,
        method: args.method,
        strategy: args.strategy,
        cascade_steps: args.cascade_steps,
        model: args.model,
        output_path: args.output,
        record_timings: args.timings.then_some(true),
        ..args.problem.overrides()
    };
    let cfg = o.apply(args.problem.base()?)?;
    let report = run_experiment(&cfg)?;
    if cfg.output_path.is_none() {
        print!("{}", report.to_csv()?);
    }
    Ok(if report.has_errors() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn probe(args: ProbeArgs) -> Result<ExitCode> {
    let cfg = args.problem.resolve()?;
    let setup = build_problem(&cfg)?;
    let r = monotonicity_probe::<f64, _>(setup.coefficient.as_ref(), args.samples, args.cap, cfg.seed);
    println!("problem,samples,cap,lambda,big_lambda,c0,jacobian_lipschitz,pass");
    println!(
        "{},{},{},{},{},{},{},{}",
        cfg.problem.label(),
        args.samples,
        args.cap,
        r.lambda,
        r.big_lambda,
        r.c0,
        r.jacobian_lipschitz,
        r.pass
    );
    Ok(if r.pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn decay(args: DecayArgs) -> Result<ExitCode> {
    let cfg = args.problem.resolve_at(args.coarse_exponent)?;
    let setup = build_problem(&cfg)?;
    let pair = pair_for(&cfg, args.coarse_exponent)?;
    let interp = compose_interpolation(&pair)?;
    let zero = vec![0.0; pair.fine.num_nodes()];
    let field = linearize(setup.coefficient.as_ref(), cfg.model, &pair.fine, &zero)?.matrix;
    let dofs = pair.coarse.interior_nodes().len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    println!("sample,m,gap");
    for s in 0..args.samples {
        let v: Vec<f64> = (0..dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gaps = decay_study(&pair, &interp, &field, &v, args.max_layers)?;
        for (i, g) in gaps.iter().enumerate() {
            println!("{s},{},{g:e}", i + 1);
        }
        match decay_rate(&gaps) {
            Some(b) => log::info!("sample {s}: fitted rate {b:.4}"),
            None => log::info!("sample {s}: too few positive gaps to fit a rate"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn indicator(args: IndicatorArgs) -> Result<ExitCode> {
    let cfg = args.problem.resolve_at(args.coarse_exponent)?;
    let setup = build_problem(&cfg)?;
    let (_, reference) = reference_solution(&cfg)?;
    let pair = pair_for(&cfg, args.coarse_exponent)?;
    let interp = compose_interpolation(&pair)?;
    let zero = vec![0.0; pair.fine.num_nodes()];
    let field = linearize(setup.coefficient.as_ref(), cfg.model, &pair.fine, &zero)?.matrix;
    let perturbed = linearize(setup.coefficient.as_ref(), cfg.model, &pair.fine, &reference.solution)?.matrix;

    let cached = match &args.corrector_cache {
        Some(path) if path.exists() => {
            let cache = CorrectorCache::read_from(BufReader::new(File::open(path)?))?;
            if cache.matches(&pair, args.layers) {
                cache.correctors
            } else {
                log::warn!("corrector cache {} does not match this mesh pair and m; ignoring it", path.display());
                Vec::new()
            }
        }
        _ => Vec::new(),
    };
    let set = CorrectorSet::build(&pair, &interp, &field, args.layers, &cached)?;
    log::info!("{} corrector solves, {} reused", set.solve_count(), cached.len().min(pair.coarse.num_elements()));
    if let Some(path) = &args.corrector_cache {
        let cache = CorrectorCache {
            coarse_divisions: pair.coarse.divisions(),
            fine_divisions: pair.fine.divisions(),
            layers: args.layers,
            correctors: set.correctors().to_vec(),
        };
        let mut bytes = Vec::new();
        cache.write_to(&mut bytes)?;
        write_atomic(path, &bytes)?;
    }

    let values = compute_indicators(&pair, &field, &perturbed, &set)?;
    let mut text = String::from("element,x,y,indicator\n");
    for (t, v) in values.iter().enumerate() {
        let c = pair.coarse.barycenter(t);
        text.push_str(&format!("{t},{},{},{v:e}\n", c[0], c[1]));
    }
    match &args.output {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn mesh(divisions: usize) -> Result<ExitCode> {
    let m = Mesh::new(divisions)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    m.write_text(&mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Probe(a) => probe(a),
        Command::Decay(a) => decay(a),
        Command::Indicator(a) => indicator(a),
        Command::Mesh { divisions } => mesh(divisions),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
