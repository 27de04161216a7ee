use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmcm::{FitConfig, GmcmError, ReproParams};
use serde::Serialize;

mod benchmark;
mod fit;
mod io;
mod manifest;
mod simulate;

use io::InputError;

/// Fit, simulate and benchmark Gaussian mixture copula models.
///
/// Exit codes: 0 success, 1 numerical failure during a fit, 2 usage or
/// input error, 3 fit stopped at the iteration limit without converging.
#[derive(Parser, Debug)]
#[command(name = "gmcm", version, about, long_about)]
struct Cli {
    /// Worker threads for parallel work (defaults to the logical core count)
    #[arg(long, global = true, env = "GMCM_THREADS")]
    threads: Option<usize>,

    /// Leave wall-clock time out of manifests so reruns are byte-identical
    #[arg(long, global = true)]
    no_timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a labelled dataset; writes data.csv and truth.json
    Simulate(simulate::SimulateArgs),
    /// Fit a mixture copula to a CSV; writes report.json and labels.csv
    Fit(fit::FitArgs),
    /// Reproducibility analysis; writes report.json and idr.csv
    Repro(fit::ReproArgs),
    /// Compare the gradient fit with pseudo-EM over a simulation suite
    Benchmark(benchmark::BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ad,
    Pem,
}

/// Optimizer flags shared by every fitting command.
#[derive(Args, Debug, Clone, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, default_value_t = 750)]
    pub max_iters: usize,

    /// Stop once the traced log-likelihood changes by less than this
    #[arg(long, default_value_t = 1e-6)]
    pub gamma: f64,

    /// Adam steps per latent reset
    #[arg(long, default_value_t = 1)]
    pub grad_steps: usize,
}

impl OptimArgs {
    pub fn config(&self) -> Result<FitConfig> {
        let config = FitConfig {
            learning_rate: self.lr,
            max_iterations: self.max_iters,
            convergence_gamma: self.gamma,
            grad_steps_per_reset: self.grad_steps,
            seed: self.seed,
            ..FitConfig::default()
        };
        config.validate().map_err(|e| io::input_error(e.to_string()))?;
        Ok(config)
    }
}

/// Flags that apply to every command.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub timing: bool,
}

pub enum Outcome {
    Done,
    NotConverged,
}

/// Parses `alpha1,mu,sigma,rho`.
pub fn parse_repro(s: &str) -> std::result::Result<ReproParams, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, mu, sigma, rho] => Ok(ReproParams::new(a, mu, sigma, rho)),
        _ => Err(format!("expected alpha1,mu,sigma,rho; got {} values", parts.len())),
    }
}

/// Errors raised inside the iteration loop are numerical failures; anything
/// rejected before the first iteration is bad input.
pub fn library_error(e: GmcmError) -> anyhow::Error {
    match e {
        GmcmError::AtIteration { .. } => anyhow::Error::new(e),
        other => io::input_error(other.to_string()),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(io::input_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let globals = Globals { timing: !cli.no_timing };
    match cli.command {
        Command::Simulate(args) => simulate::run(&args, globals),
        Command::Fit(args) => fit::run_fit(&args, globals),
        Command::Repro(args) => fit::run_repro(&args, globals),
        Command::Benchmark(args) => benchmark::run(&args, globals),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: stopped at the iteration limit without converging; outputs were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let input = e.downcast_ref::<InputError>().is_some()
                || e.downcast_ref::<std::io::Error>().is_some()
                || e.downcast_ref::<csv::Error>().is_some();
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}
