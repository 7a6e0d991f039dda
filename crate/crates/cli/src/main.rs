use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csbp_core::config::ExperimentConfig;
use csbp_core::mechanism::Mechanism;
use csbp_core::parallel::Execution;
use csbp_core::verify::EXPERIMENTS;
use csbp_lab::{parse_config, parse_list, parse_mechanism, CliError, SimulateArgs};

#[derive(Parser)]
#[command(name = "csbp-lab", version, about = "Continuous-state branching process limit theory: solvers, simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MechArg {
    /// inline TOML table, e.g. '{form = "stable_explosive", alpha = 0.5}'
    #[arg(long, short, default_value = "{form = \"neveu\"}")]
    mechanism: String,
}

impl MechArg {
    fn build(&self) -> Result<Mechanism, CliError> {
        Ok(parse_mechanism(&self.mechanism)?.build()?)
    }
}

#[derive(Args)]
struct Common {
    /// RNG seed [default: 0xC5BF, or the config file's]
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads; 1 runs sequentially
    #[arg(long, env = "CSBP_LAB_THREADS")]
    threads: Option<usize>,
    /// output file (or directory for `verify`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Criticality, moment, variation, persistence and explosion verdicts
    Classify {
        #[command(flatten)]
        mech: MechArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// v_t(λ), v_{-t}(λ), v̄_t and v̲_t
    Cumulant {
        #[command(flatten)]
        mech: MechArg,
        /// comma-separated times
        #[arg(long, default_value = "1")]
        t: String,
        /// comma-separated λ values
        #[arg(long, default_value = "1")]
        lambda: String,
        /// also integrate the ODE as a cross-check
        #[arg(long)]
        ode: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// G, G⁻¹ and the limit CDF F = exp(−G⁻¹)
    Renorm {
        #[command(flatten)]
        mech: MechArg,
        #[arg(long)]
        lambda0: Option<f64>,
        /// comma-separated inputs
        #[arg(long, default_value = "0.5,1,2")]
        input: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample paths or flow realizations on a grid
    Simulate {
        #[command(flatten)]
        mech: MechArg,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        n: u64,
        /// initial mass (or flow extent)
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, default_value = "1,2,4,8")]
        grid: String,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        s_threshold: f64,
        /// emit the flow of subordinators (one row per atom)
        #[arg(long)]
        flow: bool,
    },
    /// Run a named verification experiment
    Verify {
        /// experiment name; may come from --config instead
        name: Option<String>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the experiment names
    ListExperiments,
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn verify_config(name: Option<String>, common: &Common, n: Option<u64>, config: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::new(name.as_deref().ok_or_else(|| CliError::Usage("missing experiment name".into()))?),
    };
    if let Some(name) = name {
        if config.is_some() && name != cfg.experiment {
            return Err(CliError::Usage(format!("experiment {name} does not match config ({})", cfg.experiment)));
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if n.is_some() {
        cfg.n = n;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Classify { mech, out } => csbp_lab::classify(&mech.build()?, sink(&out)?)?,
        Command::Cumulant { mech, t, lambda, ode, out } => {
            csbp_lab::cumulant(&mech.build()?, &parse_list(&t)?, &parse_list(&lambda)?, ode, sink(&out)?)?
        }
        Command::Renorm { mech, lambda0, input, out } => csbp_lab::renorm(&mech.build()?, lambda0, &parse_list(&input)?, sink(&out)?)?,
        Command::Simulate { mech, common, n, x, grid, epsilon, s_threshold, flow } => {
            let args = SimulateArgs { x, grid: parse_list(&grid)?, n, seed: common.seed.unwrap_or(csbp_core::config::DEFAULT_SEED), epsilon, s_threshold, flow };
            csbp_lab::simulate(&mech.build()?, &args, Execution::from_threads(common.threads), sink(&common.out)?)?
        }
        Command::Verify { name, common, n, config } => {
            let cfg = verify_config(name, &common, n, config.as_deref())?;
            let outcome = csbp_lab::verify(&cfg, Execution::from_threads(common.threads), cfg.out.as_deref(), io::stdout().lock())?;
            return Ok(outcome.pass());
        }
        Command::ListExperiments => {
            let mut out = io::stdout().lock();
            for name in EXPERIMENTS {
                writeln!(out, "{name}")?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
