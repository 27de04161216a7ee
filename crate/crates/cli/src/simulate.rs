use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use gmcm::simulate::{random_gmcm_params, ProductMode, TrueParams};
use gmcm::{simulate, MarginalSpec, ReproParams, SimSpec};
use serde::Serialize;

use crate::io::{ensure_dir, write_json, write_matrix};
use crate::manifest::RunManifest;
use crate::{library_error, parse_repro, Globals, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Random mixture copula with the chosen marginals
    Gmcm,
    /// Three-cluster product mixtures (settings 1-8)
    NonGaussian,
    /// Two-component reproducibility model
    Repro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Marginal {
    Uniform,
    Gamma,
    Weibull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One scalar draw scales both coordinates
    Shared,
    /// Independent scalar draws per coordinate
    PerCoordinate,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub family: Family,

    /// Number of observations
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Components of a random mixture (gmcm family)
    #[arg(long, default_value_t = 2)]
    pub k: usize,

    /// Dimension (gmcm and repro families)
    #[arg(long, default_value_t = 2)]
    pub p: usize,

    /// Observed-scale marginal (gmcm family)
    #[arg(long, value_enum, default_value_t = Marginal::Uniform)]
    pub marginal: Marginal,

    #[arg(long, default_value_t = 2.0)]
    pub shape: f64,

    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,

    /// Settings-table row (non-gaussian family)
    #[arg(long, default_value_t = 1)]
    pub setting: u8,

    #[arg(long, value_enum, default_value_t = Mode::Shared)]
    pub mode: Mode,

    /// alpha1,mu,sigma,rho (repro family)
    #[arg(long, value_parser = parse_repro, default_value = "0.25,0.5,2,0.25")]
    pub truth: ReproParams,

    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    manifest: RunManifest,
    spec: &'a SimSpec,
    truth: &'a TrueParams,
    labels: &'a [usize],
}

impl SimulateArgs {
    pub fn spec(&self) -> Result<SimSpec> {
        let n = self.n as usize;
        Ok(match self.family {
            Family::Gmcm => {
                let marginal = match self.marginal {
                    Marginal::Uniform => MarginalSpec::Uniform,
                    Marginal::Gamma => MarginalSpec::Gamma {
                        shape: self.shape,
                        scale: self.scale,
                    },
                    Marginal::Weibull => MarginalSpec::Weibull {
                        shape: self.shape,
                        scale: self.scale,
                    },
                };
                SimSpec::Gmcm {
                    params: random_gmcm_params(self.k, self.p, self.seed).map_err(library_error)?,
                    n,
                    marginals: vec![marginal; self.p],
                    seed: self.seed,
                }
            }
            Family::NonGaussian => SimSpec::NonGaussian {
                setting: self.setting,
                n,
                mode: match self.mode {
                    Mode::Shared => ProductMode::Shared,
                    Mode::PerCoordinate => ProductMode::PerCoordinate,
                },
                seed: self.seed,
            },
            Family::Repro => SimSpec::Repro {
                params: self.truth,
                p: self.p,
                n,
                seed: self.seed,
            },
        })
    }
}

pub fn run(args: &SimulateArgs, globals: Globals) -> Result<Outcome> {
    let start = Instant::now();
    let spec = args.spec()?;
    let dataset = simulate(&spec).map_err(library_error)?;
    ensure_dir(&args.out)?;
    let data_path = args.out.join("data.csv");
    let truth_path = args.out.join("truth.json");
    write_matrix(&data_path, &dataset.data)?;
    let manifest = RunManifest::new("simulate", args, args.seed)
        .output(&data_path)
        .output(&truth_path)
        .timed(start, globals.timing);
    write_json(
        &truth_path,
        &TruthFile {
            manifest,
            spec: &spec,
            truth: &dataset.truth,
            labels: &dataset.labels,
        },
    )?;
    Ok(Outcome::Done)
}
