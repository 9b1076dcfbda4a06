use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hatqmc::problems::{synth_data, PredPreyParams, DATASET_SEED};
use hatqmc::DigitalSequence;
use hatqmc_cli::experiment::{build_approximation, fit_partition};
use hatqmc_cli::{run_experiment, run_oracle, CliError, ExperimentConfig, Method, ProblemKind, Target};

#[derive(Parser)]
#[command(name = "hatqmc", version, about = "Weighted QMC with hat-function surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the banana ground truth by tensor quadrature.
    Oracle(Common),
    /// Build the approximation of one level and write it as JSON.
    Approx {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Estimate all integrands at one level.
    Integrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Run the refinement sweep and write convergence reports.
    Converge(Common),
    /// Write the synthetic predator-prey dataset.
    Dataset {
        #[arg(long, default_value_t = DATASET_SEED)]
        seed: u64,
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        sigma: f64,
        #[arg(long, default_value = "out/dataset.json")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Banana,
    Predprey,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Adaptive,
    Combined,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<ProblemArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Integrand name, repeatable.
    #[arg(long)]
    qoi: Vec<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    tail_mult: Option<f64>,
    #[arg(long)]
    identity_rotation: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.problem {
            cfg.problem = match p {
                ProblemArg::Banana => ProblemKind::Banana,
                ProblemArg::Predprey => ProblemKind::Predprey,
            };
        }
        if let Some(m) = self.method {
            cfg.method = match m {
                MethodArg::Adaptive => Method::Adaptive,
                MethodArg::Combined => Method::Combined,
            };
        }
        if !self.qoi.is_empty() {
            cfg.qoi = self.qoi.clone();
        }
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if self.delta.is_some() {
            cfg.delta = self.delta;
        }
        if let Some(v) = self.tail_mult {
            cfg.tail_mult = v;
        }
        cfg.identity_rotation |= self.identity_rotation;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.paper_scale |= self.paper_scale;
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn level_settings(cfg: &ExperimentConfig, level: usize) -> Result<(f64, usize), CliError> {
    let mut c = cfg.clone();
    c.levels = level + 1;
    Ok(*c.schedule().last().ok_or_else(|| CliError::Config("no levels".into()))?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Oracle(common) => {
            let cfg = common.resolve()?;
            let (path, golden) = run_oracle(&cfg)?;
            for (k, v) in &golden.0 {
                println!("{k} = {:.15e} (+- {:.1e})", v.value, v.error_estimate);
            }
            println!("wrote {}", path.display());
        }
        Command::Approx { common, level } => {
            let cfg = common.resolve()?;
            let target = Target::from_config(&cfg)?;
            let comps = match cfg.method {
                Method::Combined => Some(fit_partition(&target, &cfg)?.0),
                Method::Adaptive => None,
            };
            let (eps, _) = level_settings(&cfg, level)?;
            let approx = build_approximation(&target, &cfg, comps.as_deref(), eps)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg
                .out_dir
                .join(format!("{}_{}_approx_{level}.json", target.name(), cfg.method.name()));
            std::fs::write(&path, approx.to_json()?)?;
            println!(
                "{} evaluations, {} grid points, wrote {}",
                approx.evaluations(),
                approx.grid_points(),
                path.display()
            );
        }
        Command::Integrate { common, level } => {
            let cfg = common.resolve()?;
            let target = Target::from_config(&cfg)?;
            let comps = match cfg.method {
                Method::Combined => Some(fit_partition(&target, &cfg)?.0),
                Method::Adaptive => None,
            };
            let (eps, n) = level_settings(&cfg, level)?;
            let approx = build_approximation(&target, &cfg, comps.as_deref(), eps)?;
            let names = target.output_names();
            let seq = DigitalSequence::sobol(target.dim())?;
            let delta = cfg.delta.map(hatqmc::DeltaRule::Fixed).unwrap_or_default();
            let (values, report) = approx.estimate(&target, names.len(), n, delta, &seq)?;
            for (name, v) in names.iter().zip(&values) {
                println!("{name} = {v:.12e}");
            }
            if let Some(v) = values.get(names.len()) {
                println!("integral of normalized target over Psi = {v:.6e}");
            }
            for w in report.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Converge(common) => {
            let cfg = common.resolve()?;
            let out = run_experiment(&cfg)?;
            for r in &out.records {
                match r.slope {
                    Some(s) => println!("{} {} {}: slope {s:.3}", r.problem, r.method, r.qoi),
                    None => println!("{} {} {}: slope unavailable", r.problem, r.method, r.qoi),
                }
            }
            println!("wrote {}", cfg.out_dir.join(out.stem()).display());
        }
        Command::Dataset { seed, sigma, out } => {
            let data = synth_data(&PredPreyParams::TRUE, sigma, seed)?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            let json = serde_json::to_string_pretty(&data).map_err(hatqmc::Error::from)?;
            std::fs::write(&out, json + "\n")?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
