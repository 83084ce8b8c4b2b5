//! `surrohmc`: dataset generation, surrogate training, posterior sampling,
//! diagnostics and prediction.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 configuration error,
//! 3 I/O or file-format error, 4 numerical failure, 5 domain error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surrohmc::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("selftest failed")]
    SelftestFailed,
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::SelftestFailed => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                Error::Invalid(_) | Error::DimensionMismatch { .. } => 2,
                Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Format { .. }
                | Error::Corrupt(_)
                | Error::VersionMismatch { .. } => 3,
                Error::Domain { .. } => 5,
                _ => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "surrohmc", version, about = "Neural-network surrogate likelihoods with NUTS sampling")]
struct Cli {
    /// Run configuration (TOML). Flags override its fields.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the oracle over the domain box and write a dataset.
    GenData(GenDataArgs),
    /// Train the surrogate on a dataset and write the model file.
    Train(TrainArgs),
    /// Write a noisy synthetic observation of the oracle at known parameters.
    Simulate(SimulateArgs),
    /// Sample the surrogate posterior for an observed spectrum.
    Sample(SampleArgs),
    /// Summarise a chain: intervals, regions, ACF, predictive bands.
    Diagnose(DiagnoseArgs),
    /// Evaluate the surrogate at one parameter point.
    Predict(PredictArgs),
    /// Run the numerical invariant suite.
    Selftest,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Number of oracle calls (data.n_samples).
    #[arg(long)]
    n: Option<usize>,
    /// data.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated solver failure probability (data.p_fail).
    #[arg(long)]
    p_fail: Option<f64>,
    /// Output dataset (paths.dataset).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// paths.dataset
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output model file (paths.model).
    #[arg(long)]
    model: Option<PathBuf>,
    /// train.max_epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// train.learning_rate
    #[arg(long)]
    lr: Option<f64>,
    /// train.rng_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on standard error.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Eight comma-separated true parameters (simulate.truth).
    #[arg(long, value_delimiter = ',', num_args = 8)]
    truth: Option<Vec<f64>>,
    /// Relative noise per bin (simulate.noise).
    #[arg(long)]
    noise: Option<f64>,
    /// simulate.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output spectrum (paths.observed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplerArg {
    Nuts,
    Rwmh,
}

#[derive(Debug, Args)]
struct ContextArgs {
    /// context.alpha
    #[arg(long)]
    alpha: Option<f64>,
    /// context.i_hmf
    #[arg(long)]
    i_hmf: Option<f64>,
    /// context.v_sw
    #[arg(long)]
    v_sw: Option<f64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// paths.model
    #[arg(long)]
    model: Option<PathBuf>,
    /// paths.observed
    #[arg(long)]
    observed: Option<PathBuf>,
    /// paths.output_dir
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// chain.sampler
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    /// chain.n_samples
    #[arg(long)]
    n_samples: Option<usize>,
    /// chain.burn_in
    #[arg(long)]
    burn_in: Option<usize>,
    /// chain.thin
    #[arg(long)]
    thin: Option<usize>,
    /// chain.seed
    #[arg(long)]
    seed: Option<u64>,
    /// chain.rwmh_scale
    #[arg(long)]
    rwmh_scale: Option<f64>,
    /// chain.rwmh_autotune
    #[arg(long)]
    rwmh_autotune: Option<bool>,
    /// Independent chains, run in parallel on separate random streams.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[command(flatten)]
    context: ContextArgs,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// paths.model
    #[arg(long)]
    model: Option<PathBuf>,
    /// paths.observed
    #[arg(long)]
    observed: Option<PathBuf>,
    /// Chain file; defaults to chain.csv in the output directory.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// paths.output_dir
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// diagnose.max_lag
    #[arg(long)]
    max_lag: Option<usize>,
    #[command(flatten)]
    context: ContextArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// paths.model
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    context: ContextArgs,
    #[arg(long)]
    k0_par: f64,
    #[arg(long)]
    a_par: f64,
    #[arg(long)]
    b_par: f64,
    #[arg(long)]
    a_perp: f64,
    #[arg(long)]
    b_perp: f64,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_context(cfg: &mut config::RunConfig, a: ContextArgs) {
    set(&mut cfg.context.alpha, a.alpha);
    set(&mut cfg.context.i_hmf, a.i_hmf);
    set(&mut cfg.context.v_sw, a.v_sw);
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => {
            set(&mut cfg.data.n_samples, a.n);
            set(&mut cfg.data.seed, a.seed);
            set(&mut cfg.data.p_fail, a.p_fail);
            set(&mut cfg.paths.dataset, a.out);
            cfg.validate()?;
            commands::gen_data(&cfg)
        }
        Command::Train(a) => {
            set(&mut cfg.paths.dataset, a.dataset);
            set(&mut cfg.paths.model, a.model);
            set(&mut cfg.train.max_epochs, a.epochs);
            set(&mut cfg.train.learning_rate, a.lr);
            set(&mut cfg.train.rng_seed, a.seed);
            cfg.validate()?;
            commands::train(&cfg, a.quiet)
        }
        Command::Simulate(a) => {
            if let Some(t) = a.truth {
                cfg.simulate.truth = t.try_into().map_err(|_| CliError::Config("simulate.truth: needs 8 values".into()))?;
            }
            set(&mut cfg.simulate.noise, a.noise);
            set(&mut cfg.simulate.seed, a.seed);
            set(&mut cfg.paths.observed, a.out);
            cfg.validate()?;
            commands::simulate(&cfg)
        }
        Command::Sample(a) => {
            set(&mut cfg.paths.model, a.model);
            set(&mut cfg.paths.observed, a.observed);
            set(&mut cfg.paths.output_dir, a.out_dir);
            if let Some(s) = a.sampler {
                cfg.chain.sampler = match s {
                    SamplerArg::Nuts => surrohmc::samplers::SamplerKind::Nuts,
                    SamplerArg::Rwmh => surrohmc::samplers::SamplerKind::Rwmh,
                };
            }
            set(&mut cfg.chain.n_samples, a.n_samples);
            set(&mut cfg.chain.burn_in, a.burn_in);
            if a.thin.is_some() {
                cfg.chain.thin = a.thin;
            }
            set(&mut cfg.chain.seed, a.seed);
            set(&mut cfg.chain.rwmh_scale, a.rwmh_scale);
            set(&mut cfg.chain.rwmh_autotune, a.rwmh_autotune);
            apply_context(&mut cfg, a.context);
            if a.chains == 0 {
                return Err(CliError::Config("--chains: must be at least 1".into()));
            }
            cfg.validate()?;
            commands::sample(&cfg, a.chains)
        }
        Command::Diagnose(a) => {
            set(&mut cfg.paths.model, a.model);
            set(&mut cfg.paths.observed, a.observed);
            set(&mut cfg.paths.output_dir, a.out_dir);
            set(&mut cfg.diagnose.max_lag, a.max_lag);
            apply_context(&mut cfg, a.context);
            cfg.validate()?;
            commands::diagnose(&cfg, a.chain)
        }
        Command::Predict(a) => {
            set(&mut cfg.paths.model, a.model);
            apply_context(&mut cfg, a.context);
            cfg.validate()?;
            let z = [a.k0_par, a.a_par, a.b_par, a.a_perp, a.b_perp];
            commands::predict(&cfg, z)
        }
        Command::Selftest => commands::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
