use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use gmcm::{
    fit_ad_gmcm, fit_pem, fit_pem_repro, fit_repro, map_labels, scaled_ranks, FitReport, InitStrategy, ReproConfig,
    ReproParams, ReproResult,
};
use serde::Serialize;

use crate::io::{ensure_dir, input_error, read_matrix, write_json, write_table};
use crate::manifest::RunManifest;
use crate::{library_error, parse_repro, Globals, Method, OptimArgs, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Random,
    Kmeans,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    /// Headed numeric CSV, one row per observation
    pub data: PathBuf,

    /// Number of mixture components
    #[arg(long)]
    pub k: usize,

    #[arg(long, value_enum, default_value_t = Method::Ad)]
    pub method: Method,

    #[arg(long, value_enum, default_value_t = Init::Kmeans)]
    pub init: Init,

    #[command(flatten)]
    pub optim: OptimArgs,

    /// Pin component 1 to zero mean and identity covariance
    #[arg(long)]
    pub anchor: bool,

    /// Restrict every covariance to be diagonal
    #[arg(long)]
    pub diagonal: bool,

    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct FitFile<'a> {
    manifest: RunManifest,
    final_exact_ll: f64,
    report: &'a FitReport,
}

#[derive(Serialize)]
struct LabelRow {
    row: usize,
    label: usize,
}

fn outcome(converged: bool) -> Outcome {
    if converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    }
}

pub fn run_fit(args: &FitArgs, globals: Globals) -> Result<Outcome> {
    let start = Instant::now();
    let mut config = args.optim.config()?;
    config.anchor = args.anchor;
    config.diagonal = args.diagonal;
    let data = read_matrix(&args.data)?;
    let ranks = scaled_ranks(&data).map_err(library_error)?;
    let init = match args.init {
        Init::Random => InitStrategy::Random,
        Init::Kmeans => InitStrategy::KMeans,
    };
    let report = match args.method {
        Method::Ad => fit_ad_gmcm(&ranks, args.k, &init, &config),
        Method::Pem => fit_pem(&ranks, args.k, &init, &config),
    }
    .map_err(library_error)?;
    let labels = map_labels(&report.final_latent, &report.final_params).map_err(library_error)?;

    ensure_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    let labels_path = args.out.join("labels.csv");
    let rows: Vec<LabelRow> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| LabelRow { row: i + 1, label })
        .collect();
    write_table(&labels_path, &rows)?;
    let manifest = RunManifest::new("fit", args, args.optim.seed)
        .input(&args.data)
        .output(&report_path)
        .output(&labels_path)
        .timed(start, globals.timing);
    write_json(
        &report_path,
        &FitFile {
            manifest,
            final_exact_ll: report.final_exact_ll(),
            report: &report,
        },
    )?;
    Ok(outcome(report.converged))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReproArgs {
    /// Headed CSV with one column per replicate experiment
    pub data: PathBuf,

    /// Starting alpha1,mu,sigma,rho
    #[arg(long, value_parser = parse_repro, default_value = "0.32,0.5,1,0.25")]
    pub init: ReproParams,

    /// Adjusted-IDR cutoff for declaring a subject reproducible
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,

    #[arg(long, value_enum, default_value_t = Method::Ad)]
    pub method: Method,

    /// Half-exponent of the correlation penalty
    #[arg(long, default_value_t = 50)]
    pub penalty_b: u32,

    #[command(flatten)]
    pub optim: OptimArgs,

    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ReproFile<'a> {
    manifest: RunManifest,
    params: &'a ReproParams,
    n_reproducible: usize,
    final_exact_ll: f64,
    report: &'a FitReport,
}

#[derive(Serialize)]
struct IdrRow {
    row: usize,
    idr: f64,
    adjusted_idr: f64,
    reproducible: bool,
    map_reproducible: bool,
}

pub fn run_repro(args: &ReproArgs, globals: Globals) -> Result<Outcome> {
    let start = Instant::now();
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(input_error("--threshold must lie in [0, 1]"));
    }
    let config = ReproConfig {
        fit: args.optim.config()?,
        penalty_b: args.penalty_b,
        threshold: args.threshold,
    };
    let data = read_matrix(&args.data)?;
    if data.ncols() < 2 {
        return Err(input_error("reproducibility analysis needs at least two replicate columns"));
    }
    let ranks = scaled_ranks(&data).map_err(library_error)?;
    let result: ReproResult = match args.method {
        Method::Ad => fit_repro(&ranks, &args.init, &config),
        Method::Pem => fit_pem_repro(&ranks, &args.init, &config),
    }
    .map_err(library_error)?;

    ensure_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    let idr_path = args.out.join("idr.csv");
    let map = result.map_reproducible();
    let rows: Vec<IdrRow> = (0..result.idr.len())
        .map(|i| IdrRow {
            row: i + 1,
            idr: result.idr[i],
            adjusted_idr: result.adjusted_idr[i],
            reproducible: result.reproducible[i],
            map_reproducible: map[i],
        })
        .collect();
    write_table(&idr_path, &rows)?;
    let manifest = RunManifest::new("repro", args, args.optim.seed)
        .input(&args.data)
        .output(&report_path)
        .output(&idr_path)
        .timed(start, globals.timing);
    write_json(
        &report_path,
        &ReproFile {
            manifest,
            params: &result.params,
            n_reproducible: result.reproducible.iter().filter(|&&r| r).count(),
            final_exact_ll: result.fit_report.final_exact_ll(),
            report: &result.fit_report,
        },
    )?;
    Ok(outcome(result.fit_report.converged))
}
