use gmcm::linalg::cholesky;
use gmcm::marginal::reset_latent_with;
use gmcm::optimizer::{fit_ad_gmcm_full, kmeans};
use gmcm::pem::{e_step, fit_pem_with, m_step};
use gmcm::simulate::{random_gmcm_params, simulate_gmcm};
use gmcm::{
    fit_ad_gmcm, fit_pem, grad_exact_loglik, init_params, pseudo_loglik, scaled_ranks, DataMatrix, FitConfig,
    InitStrategy, MarginalSpec, ResetConfig, Role, UnconstrainedParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn simulated_ranks(k: usize, p: usize, n: usize, seed: u64) -> DataMatrix {
    let params = random_gmcm_params(k, p, 1000 + seed).unwrap();
    let ds = simulate_gmcm(&params, n, &vec![MarginalSpec::Uniform; p], seed).unwrap();
    scaled_ranks(&ds.data).unwrap()
}

fn short(seed: u64) -> FitConfig {
    FitConfig {
        max_iterations: 60,
        seed,
        ..FitConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let ranks = simulated_ranks(2, 2, 200, 4);
    for init in [InitStrategy::KMeans, InitStrategy::Random] {
        let a = fit_ad_gmcm(&ranks, 2, &init, &short(9)).unwrap();
        let b = fit_ad_gmcm(&ranks, 2, &init, &short(9)).unwrap();
        assert_eq!(a, b);
        let a = fit_pem(&ranks, 2, &init, &short(9)).unwrap();
        let b = fit_pem(&ranks, 2, &init, &short(9)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn report_invariants_hold() {
    let ranks = simulated_ranks(2, 2, 150, 1);
    let loose = FitConfig {
        convergence_gamma: 1e-2,
        learning_rate: 1e-2,
        ..short(1)
    };
    for report in [
        fit_ad_gmcm(&ranks, 2, &InitStrategy::KMeans, &loose).unwrap(),
        fit_ad_gmcm(&ranks, 2, &InitStrategy::KMeans, &short(1)).unwrap(),
    ] {
        assert_eq!(report.trace.len(), report.iterations_used);
        assert!(report.iterations_used <= 60);
        assert_eq!(report.final_latent.role(), Role::Latent);
        if report.converged {
            let t = &report.trace;
            assert!((t[t.len() - 1].exact_ll - t[t.len() - 2].exact_ll).abs() < loose.convergence_gamma);
        } else {
            assert_eq!(report.iterations_used, 60);
        }
    }
}

#[test]
fn anchored_component_never_moves() {
    let ranks = simulated_ranks(3, 2, 200, 2);
    let config = FitConfig {
        anchor: true,
        learning_rate: 1e-2,
        ..short(2)
    };
    let (_, end) = fit_ad_gmcm_full(&ranks, 3, &InitStrategy::KMeans, &config).unwrap();
    assert_eq!(end.means[0], vec![0.0, 0.0]);
    assert_eq!(end.factors[0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let start = init_params(&ranks, 3, &InitStrategy::KMeans, 2).unwrap();
    assert_ne!(end.means[1], start.means[1]);
}

#[test]
fn diagonal_fit_keeps_zero_off_diagonals() {
    let ranks = simulated_ranks(2, 3, 150, 3);
    let config = FitConfig {
        diagonal: true,
        ..short(3)
    };
    let (report, end) = fit_ad_gmcm_full(&ranks, 2, &InitStrategy::KMeans, &config).unwrap();
    for f in &end.factors {
        for (a, row) in f.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                if a != b {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }
    for c in &report.final_params.covariances {
        assert_eq!(c[0][1], 0.0);
    }
}

#[test]
fn single_diagonal_component_stays_at_zero() {
    let ranks = simulated_ranks(3, 2, 300, 5);
    let config = FitConfig {
        diagonal: true,
        ..short(5)
    };
    let report = fit_ad_gmcm(&ranks, 1, &InitStrategy::Random, &config).unwrap();
    for entry in &report.trace {
        assert!(entry.exact_ll.abs() < 1e-9, "{}", entry.exact_ll);
    }
}

#[test]
fn sample_moments_are_stationary_for_one_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, p) = (60, 3);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            vec![z[0], 0.6 * z[0] + 0.8 * z[1], -0.3 * z[1] + z[2]]
        })
        .collect();
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; p * p];
    for r in &rows {
        for a in 0..p {
            for b in 0..p {
                cov[a * p + b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n as f64;
            }
        }
    }
    let l = cholesky(&cov, p).unwrap();
    let u = UnconstrainedParams {
        alpha: vec![0.0],
        means: vec![mean],
        factors: vec![l.chunks(p).map(<[f64]>::to_vec).collect()],
    };
    let latent = DataMatrix::from_rows(&rows, Role::Latent).unwrap();
    let grad = grad_exact_loglik(&u, &latent).unwrap();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "gradient norm {norm:e}");
}

#[test]
fn frozen_latent_pem_is_monotone_em() {
    let ranks = simulated_ranks(3, 2, 300, 6);
    let config = FitConfig {
        max_iterations: 100,
        convergence_gamma: 1e-12,
        seed: 6,
        ..FitConfig::default()
    };
    let report = fit_pem_with(&ranks, 3, &InitStrategy::KMeans, &config, true).unwrap();
    for w in report.trace.windows(2) {
        assert!(w[1].pseudo_ll >= w[0].pseudo_ll - 1e-9, "{} -> {}", w[0].pseudo_ll, w[1].pseudo_ll);
    }
}

#[test]
fn each_pem_update_raises_pseudo_likelihood_at_fixed_latent() {
    let ranks = simulated_ranks(3, 2, 300, 7);
    let mut params = init_params(&ranks, 3, &InitStrategy::KMeans, 7)
        .unwrap()
        .to_constrained()
        .unwrap();
    for _ in 0..30 {
        let latent = reset_latent_with(&ranks, &params, &ResetConfig::default()).unwrap().latent;
        let before = pseudo_loglik(&latent, &params).unwrap();
        let next = m_step(&latent, &e_step(&latent, &params).unwrap()).unwrap();
        let after = pseudo_loglik(&latent, &next).unwrap();
        assert!(after >= before - 1e-9, "{before} -> {after}");
        params = next;
    }
}

#[test]
fn kmeans_recovers_blob_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = Vec::new();
    for center in [[-2.0, 1.5], [1.0, -1.0]] {
        for _ in 0..80 {
            points.push(vec![
                center[0] + 0.3 * rng.sample::<f64, _>(StandardNormal),
                center[1] + 0.3 * rng.sample::<f64, _>(StandardNormal),
            ]);
        }
    }
    // oracle: the generating split is the optimal partition here
    let oracle: Vec<Vec<f64>> = [&points[..80], &points[80..]]
        .iter()
        .map(|g| (0..2).map(|j| g.iter().map(|p| p[j]).sum::<f64>() / g.len() as f64).collect())
        .collect();
    let km = kmeans(&points, 2, 25, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    for o in &oracle {
        let nearest = km
            .centers
            .iter()
            .map(|c| ((c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 0.5, "{nearest}");
    }
    let mut sizes = km.sizes.clone();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![80, 80]);
}

/// Small steps keep the exact log-likelihood non-decreasing on most runs.
#[test]
fn small_learning_rate_runs_are_mostly_monotone() {
    let monotone = (0..10u64)
        .into_par_iter()
        .filter(|&seed| {
            let ranks = simulated_ranks(3, 2, 500, seed);
            let config = FitConfig {
                learning_rate: 1e-3,
                seed,
                ..FitConfig::default()
            };
            let report = fit_ad_gmcm(&ranks, 3, &InitStrategy::KMeans, &config).unwrap();
            report.monotonicity_violations.count == 0
        })
        .count();
    assert!(monotone >= 9, "{monotone}/10 monotone runs");
}
