use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use gmcm::simulate::{random_gmcm_params, simulate_gmcm, simulate_non_gaussian_with, simulate_repro};
use gmcm::{
    adjusted_rand_index, fit_ad_gmcm, fit_pem, fit_pem_repro, fit_repro, init_params, map_labels, scaled_ranks,
    FitConfig, FitReport, GmcmError, InitStrategy, LabeledDataset, MarginalSpec, ReproConfig, ReproParams,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{ensure_dir, input_error, write_json, write_table};
use crate::manifest::RunManifest;
use crate::simulate::Mode;
use crate::{Globals, OptimArgs, Outcome};

/// Keeps the data stream of a random-mixture replicate apart from the
/// stream that drew its parameters.
const DATA_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Log-likelihoods closer than this count as a tie.
const LL_TIE: f64 = 1e-6;
const ARI_TIE: f64 = 1e-3;

const REPRO_TRUTH: ReproParams = ReproParams {
    alpha1: 0.25,
    mu: 0.5,
    sigma: 2.0,
    rho: 0.25,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Random mixtures over K, p in {2, 3, 4}
    GmcmGrid,
    /// Product mixtures, settings 1-8, K = 3
    NonGaussian,
    /// Reproducibility model from three starting points
    ReproInits,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,

    /// Datasets per setting
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,

    /// Observations per dataset (default 500, 300 and 1000 by suite)
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: Option<u64>,

    /// How the product mixtures apply their scalar factor
    #[arg(long, value_enum, default_value_t = Mode::Shared)]
    pub mode: Mode,

    /// Optimizer settings; replicate r uses seed + r
    #[command(flatten)]
    pub optim: OptimArgs,

    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
enum Setting {
    Gmcm { k: usize, p: usize },
    NonGaussian { id: u8 },
    Repro { name: &'static str, init: ReproParams },
}

impl Setting {
    fn name(&self) -> String {
        match self {
            Setting::Gmcm { k, p } => format!("K{k}_p{p}"),
            Setting::NonGaussian { id } => format!("setting{id}"),
            Setting::Repro { name, .. } => format!("init_{name}"),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match *self {
            Setting::Gmcm { k, p } => (k, p),
            Setting::NonGaussian { .. } => (3, 2),
            Setting::Repro { .. } => (2, 2),
        }
    }
}

fn settings(suite: Suite) -> Vec<Setting> {
    match suite {
        Suite::GmcmGrid => (2..=4)
            .flat_map(|k| (2..=4).map(move |p| Setting::Gmcm { k, p }))
            .collect(),
        Suite::NonGaussian => (1..=8).map(|id| Setting::NonGaussian { id }).collect(),
        Suite::ReproInits => vec![
            Setting::Repro {
                name: "I",
                init: ReproParams::new(0.32, 0.5, 1.0, 0.25),
            },
            Setting::Repro {
                name: "II",
                init: ReproParams::new(0.25, 0.5, 1.0, 0.25),
            },
            Setting::Repro {
                name: "III",
                init: ReproParams::new(0.25, 0.5, 2.0, 0.25),
            },
        ],
    }
}

fn default_n(suite: Suite) -> usize {
    match suite {
        Suite::GmcmGrid => 500,
        Suite::NonGaussian => 300,
        Suite::ReproInits => 1000,
    }
}

#[derive(Debug, Clone, Serialize, Default)]
struct ReplicateRow {
    setting: String,
    replicate: u64,
    seed: u64,
    failed: bool,
    error: String,
    ll_ad: Option<f64>,
    ll_pem: Option<f64>,
    ari_ad: Option<f64>,
    ari_pem: Option<f64>,
    iterations_ad: Option<usize>,
    iterations_pem: Option<usize>,
    converged_ad: Option<bool>,
    converged_pem: Option<bool>,
    alpha1_ad: Option<f64>,
    mu_ad: Option<f64>,
    sigma_ad: Option<f64>,
    rho_ad: Option<f64>,
    alpha1_pem: Option<f64>,
    mu_pem: Option<f64>,
    sigma_pem: Option<f64>,
    rho_pem: Option<f64>,
}

struct Pair {
    ad: FitReport,
    pem: FitReport,
    ari_ad: f64,
    ari_pem: f64,
    repro: Option<(ReproParams, ReproParams)>,
}

fn labelled_ari(ds: &LabeledDataset, report: &FitReport) -> gmcm::Result<f64> {
    let labels = map_labels(&report.final_latent, &report.final_params)?;
    adjusted_rand_index(&labels, &ds.labels)
}

fn mixture_pair(ds: &LabeledDataset, k: usize, config: &FitConfig) -> gmcm::Result<Pair> {
    let ranks = scaled_ranks(&ds.data)?;
    let start = InitStrategy::Given(init_params(&ranks, k, &InitStrategy::KMeans, config.seed)?);
    let ad = fit_ad_gmcm(&ranks, k, &start, config)?;
    let pem = fit_pem(&ranks, k, &start, config)?;
    Ok(Pair {
        ari_ad: labelled_ari(ds, &ad)?,
        ari_pem: labelled_ari(ds, &pem)?,
        ad,
        pem,
        repro: None,
    })
}

fn repro_pair(ds: &LabeledDataset, init: &ReproParams, config: &ReproConfig) -> gmcm::Result<Pair> {
    let ranks = scaled_ranks(&ds.data)?;
    let ad = fit_repro(&ranks, init, config)?;
    let pem = fit_pem_repro(&ranks, init, config)?;
    // null component is label 1
    let ari = |idr: &[f64]| {
        let labels: Vec<usize> = idr.iter().map(|&v| if v >= 0.5 { 1 } else { 2 }).collect();
        adjusted_rand_index(&labels, &ds.labels)
    };
    Ok(Pair {
        ari_ad: ari(&ad.idr)?,
        ari_pem: ari(&pem.idr)?,
        repro: Some((ad.params, pem.params)),
        ad: ad.fit_report,
        pem: pem.fit_report,
    })
}

fn run_replicate(setting: &Setting, n: usize, mode: Mode, config: &FitConfig) -> gmcm::Result<Pair> {
    let seed = config.seed;
    match *setting {
        Setting::Gmcm { k, p } => {
            let params = random_gmcm_params(k, p, seed)?;
            let ds = simulate_gmcm(&params, n, &vec![MarginalSpec::Uniform; p], seed.wrapping_add(DATA_SEED_OFFSET))?;
            mixture_pair(&ds, k, config)
        }
        Setting::NonGaussian { id } => {
            let mode = match mode {
                Mode::Shared => gmcm::simulate::ProductMode::Shared,
                Mode::PerCoordinate => gmcm::simulate::ProductMode::PerCoordinate,
            };
            let ds = simulate_non_gaussian_with(id, n, mode, seed)?;
            mixture_pair(&ds, 3, config)
        }
        Setting::Repro { init, .. } => {
            let ds = simulate_repro(&REPRO_TRUTH, 2, n, seed)?;
            let repro = ReproConfig {
                fit: *config,
                ..ReproConfig::default()
            };
            repro_pair(&ds, &init, &repro)
        }
    }
}

fn replicate_row(setting: &Setting, replicate: u64, seed: u64, result: gmcm::Result<Pair>) -> ReplicateRow {
    let mut row = ReplicateRow {
        setting: setting.name(),
        replicate,
        seed,
        ..ReplicateRow::default()
    };
    let pair = match result {
        Ok(pair) if pair.ad.final_exact_ll().is_finite() && pair.pem.final_exact_ll().is_finite() => pair,
        Ok(_) => {
            row.failed = true;
            row.error = GmcmError::InvalidData("non-finite final log-likelihood".into()).to_string();
            return row;
        }
        Err(e) => {
            row.failed = true;
            row.error = e.to_string();
            return row;
        }
    };
    row.ll_ad = Some(pair.ad.final_exact_ll());
    row.ll_pem = Some(pair.pem.final_exact_ll());
    row.ari_ad = Some(pair.ari_ad);
    row.ari_pem = Some(pair.ari_pem);
    row.iterations_ad = Some(pair.ad.iterations_used);
    row.iterations_pem = Some(pair.pem.iterations_used);
    row.converged_ad = Some(pair.ad.converged);
    row.converged_pem = Some(pair.pem.converged);
    if let Some((ad, pem)) = pair.repro {
        row.alpha1_ad = Some(ad.alpha1);
        row.mu_ad = Some(ad.mu);
        row.sigma_ad = Some(ad.sigma);
        row.rho_ad = Some(ad.rho);
        row.alpha1_pem = Some(pem.alpha1);
        row.mu_pem = Some(pem.mu);
        row.sigma_pem = Some(pem.sigma);
        row.rho_pem = Some(pem.rho);
    }
    row
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    setting: String,
    k: usize,
    p: usize,
    n: usize,
    replicates: u64,
    n_failed: usize,
    avg_ll_ad: f64,
    sd_ll_ad: f64,
    avg_ll_pem: f64,
    sd_ll_pem: f64,
    n_higher_ll: usize,
    n_equal_ll: usize,
    n_lower_ll: usize,
    avg_ari_ad: f64,
    sd_ari_ad: f64,
    avg_ari_pem: f64,
    sd_ari_pem: f64,
    n_higher_ari: usize,
    n_equal_ari: usize,
    n_lower_ari: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 {
        f64::NAN
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

/// (better, equal, worse) for AD against PEM.
fn tally(pairs: &[(f64, f64)], tie: f64) -> (usize, usize, usize) {
    pairs.iter().fold((0, 0, 0), |(b, e, w), &(ad, pem)| {
        if (ad - pem).abs() < tie {
            (b, e + 1, w)
        } else if ad > pem {
            (b + 1, e, w)
        } else {
            (b, e, w + 1)
        }
    })
}

fn summarize(setting: &Setting, n: usize, rows: &[ReplicateRow]) -> SummaryRow {
    let ok: Vec<&ReplicateRow> = rows.iter().filter(|r| !r.failed).collect();
    let ll: Vec<(f64, f64)> = ok.iter().filter_map(|r| Some((r.ll_ad?, r.ll_pem?))).collect();
    let ari: Vec<(f64, f64)> = ok.iter().filter_map(|r| Some((r.ari_ad?, r.ari_pem?))).collect();
    let column = |xs: &[(f64, f64)], first: bool| -> Vec<f64> {
        xs.iter().map(|&(a, b)| if first { a } else { b }).collect()
    };
    let (avg_ll_ad, sd_ll_ad) = mean_sd(&column(&ll, true));
    let (avg_ll_pem, sd_ll_pem) = mean_sd(&column(&ll, false));
    let (avg_ari_ad, sd_ari_ad) = mean_sd(&column(&ari, true));
    let (avg_ari_pem, sd_ari_pem) = mean_sd(&column(&ari, false));
    let (n_higher_ll, n_equal_ll, n_lower_ll) = tally(&ll, LL_TIE);
    let (n_higher_ari, n_equal_ari, n_lower_ari) = tally(&ari, ARI_TIE);
    let (k, p) = setting.dims();
    SummaryRow {
        setting: setting.name(),
        k,
        p,
        n,
        replicates: rows.len() as u64,
        n_failed: rows.len() - ok.len(),
        avg_ll_ad,
        sd_ll_ad,
        avg_ll_pem,
        sd_ll_pem,
        n_higher_ll,
        n_equal_ll,
        n_lower_ll,
        avg_ari_ad,
        sd_ari_ad,
        avg_ari_pem,
        sd_ari_pem,
        n_higher_ari,
        n_equal_ari,
        n_lower_ari,
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    manifest: RunManifest,
    summary: &'a [SummaryRow],
}

pub fn run(args: &BenchmarkArgs, globals: Globals) -> Result<Outcome> {
    let start = Instant::now();
    let base = args.optim.config()?;
    let n = args.n.map_or_else(|| default_n(args.suite), |n| n as usize);
    let settings = settings(args.suite);
    if settings.iter().any(|s| s.dims().0 > n) {
        return Err(input_error(format!("--n {n} is smaller than the number of components")));
    }

    let jobs: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|s| (0..args.replicates).map(move |r| (s, r)))
        .collect();
    let rows: Vec<ReplicateRow> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let seed = args.optim.seed.wrapping_add(r);
            let config = FitConfig { seed, ..base };
            replicate_row(&settings[s], r, seed, run_replicate(&settings[s], n, args.mode, &config))
        })
        .collect();

    let per_setting = args.replicates as usize;
    let summary: Vec<SummaryRow> = settings
        .iter()
        .zip(rows.chunks(per_setting))
        .map(|(setting, chunk)| summarize(setting, n, chunk))
        .collect();

    ensure_dir(&args.out)?;
    let summary_csv = args.out.join("summary.csv");
    let summary_json = args.out.join("summary.json");
    let replicates_csv = args.out.join("replicates.csv");
    write_table(&summary_csv, &summary)?;
    write_table(&replicates_csv, &rows)?;
    let manifest = RunManifest::new("benchmark", args, args.optim.seed)
        .output(&summary_csv)
        .output(&summary_json)
        .output(&replicates_csv)
        .timed(start, globals.timing);
    write_json(
        &summary_json,
        &SummaryFile {
            manifest,
            summary: &summary,
        },
    )?;
    Ok(Outcome::Done)
}
