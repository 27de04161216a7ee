//! Seeded generators for mixture-copula data, the product-form
//! non-Gaussian mixtures, and the reproducibility model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma as GammaSampler, StandardNormal, Weibull as WeibullSampler};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::analysis::{expand_repro, ReproParams};
use crate::error::{GmcmError, Result};
use crate::linalg;
use crate::marginal::marginal_cdf;
use crate::model::{DataMatrix, GmcmParams, Role};

/// Observed-scale marginal applied to the copula uniforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalSpec {
    /// Emit the uniform itself.
    Uniform,
    Gamma { shape: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
}

impl MarginalSpec {
    pub fn quantile(&self, u: f64) -> Result<f64> {
        match *self {
            MarginalSpec::Uniform => Ok(u),
            MarginalSpec::Gamma { shape, scale } => {
                let g = Gamma::new(shape, 1.0 / scale)
                    .map_err(|e| GmcmError::InvalidParams(format!("gamma marginal: {e}")))?;
                Ok(g.inverse_cdf(u))
            }
            MarginalSpec::Weibull { shape, scale } => {
                if !(shape > 0.0 && scale > 0.0) {
                    return Err(GmcmError::InvalidParams("weibull shape and scale must be positive".into()));
                }
                Ok(scale * (-(1.0 - u).ln()).powf(1.0 / shape))
            }
        }
    }
}

/// How the scalar factor multiplies the normal draw in the product mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProductMode {
    /// One scalar scales both coordinates.
    #[default]
    Shared,
    /// Each coordinate gets its own scalar.
    PerCoordinate,
}

/// One row of the product-mixture settings table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonGaussianSetting {
    pub id: u8,
    pub rho1: f64,
    pub rho3: f64,
    pub weibull_scale: f64,
    pub weibull_shape: f64,
    pub gamma_scale: f64,
    pub gamma_shape: f64,
}

impl NonGaussianSetting {
    pub fn get(id: u8) -> Result<Self> {
        if !(1..=8).contains(&id) {
            return Err(GmcmError::InvalidSetting(id));
        }
        let i = id - 1;
        let rho = if i % 2 == 1 { 0.45 } else { 0.0 };
        Ok(Self {
            id,
            rho1: rho,
            rho3: rho,
            weibull_scale: if i >= 4 { 2.0 } else { 1.0 },
            weibull_shape: 2.0,
            gamma_scale: if (i / 2) % 2 == 1 { 2.0 } else { 1.0 },
            gamma_shape: 2.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrueParams {
    Gmcm { params: GmcmParams, marginals: Vec<MarginalSpec> },
    NonGaussian { setting: NonGaussianSetting, mode: ProductMode },
    Repro { params: ReproParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    /// Generating component of each row, 1-based.
    pub labels: Vec<usize>,
    pub truth: TrueParams,
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SimSpec {
    Gmcm {
        params: GmcmParams,
        n: usize,
        marginals: Vec<MarginalSpec>,
        seed: u64,
    },
    NonGaussian {
        setting: u8,
        n: usize,
        #[serde(default)]
        mode: ProductMode,
        seed: u64,
    },
    Repro {
        params: ReproParams,
        p: usize,
        n: usize,
        seed: u64,
    },
}

pub fn simulate(spec: &SimSpec) -> Result<LabeledDataset> {
    match spec {
        SimSpec::Gmcm { params, n, marginals, seed } => simulate_gmcm(params, *n, marginals, *seed),
        SimSpec::NonGaussian { setting, n, mode, seed } => simulate_non_gaussian_with(*setting, *n, *mode, *seed),
        SimSpec::Repro { params, p, n, seed } => simulate_repro(params, *p, *n, *seed),
    }
}

struct MvnSampler {
    mean: Vec<f64>,
    chol: Vec<f64>,
}

impl MvnSampler {
    fn new(mean: &[f64], cov: &[Vec<f64>], component: usize) -> Result<Self> {
        let p = mean.len();
        let chol = linalg::cholesky(&cov.concat(), p).ok_or(GmcmError::NonPositiveDefinite { component })?;
        Ok(Self {
            mean: mean.to_vec(),
            chol,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.mean.len();
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        (0..p)
            .map(|a| self.mean[a] + (0..=a).map(|b| self.chol[a * p + b] * z[b]).sum::<f64>())
            .collect()
    }
}

fn pick_component<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return c;
        }
    }
    weights.len() - 1
}

/// Keeps uniforms strictly inside (0, 1) so every quantile stays finite.
fn open_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Sample components, draw latent normals, push them through the marginal
/// mixture CDFs, then through the requested observed-scale quantiles.
pub fn simulate_gmcm(params: &GmcmParams, n: usize, marginals: &[MarginalSpec], seed: u64) -> Result<LabeledDataset> {
    params.validate()?;
    let p = params.p();
    if marginals.len() != p {
        return Err(GmcmError::InvalidParams(format!(
            "{} marginals for {p} dimensions",
            marginals.len()
        )));
    }
    if n < params.k() {
        return Err(GmcmError::InvalidParams("need n >= K".into()));
    }
    let samplers = params
        .means
        .iter()
        .zip(&params.covariances)
        .enumerate()
        .map(|(c, (m, s))| MvnSampler::new(m, s, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * p);
    for _ in 0..n {
        let c = pick_component(&params.weights, &mut rng);
        let y = samplers[c].sample(&mut rng);
        for (j, &v) in y.iter().enumerate() {
            let u = open_unit(marginal_cdf(v, j, params));
            values.push(marginals[j].quantile(u)?);
        }
        labels.push(c + 1);
    }
    Ok(LabeledDataset {
        data: DataMatrix::from_vec(n, p, values, Role::Raw)?,
        labels,
        truth: TrueParams::Gmcm {
            params: params.clone(),
            marginals: marginals.to_vec(),
        },
    })
}

pub fn simulate_non_gaussian(setting: u8, n: usize, seed: u64) -> Result<LabeledDataset> {
    simulate_non_gaussian_with(setting, n, ProductMode::Shared, seed)
}

/// Three clusters of size ⌊n/3⌋ (remainder to the first clusters), each a
/// bivariate normal draw times a Uniform, Weibull or Gamma scalar.
pub fn simulate_non_gaussian_with(setting: u8, n: usize, mode: ProductMode, seed: u64) -> Result<LabeledDataset> {
    let s = NonGaussianSetting::get(setting)?;
    if n < 3 {
        return Err(GmcmError::InvalidParams("need at least one point per cluster".into()));
    }
    let cov = |r: f64| vec![vec![0.5, r], vec![r, 0.5]];
    let mvn = [
        MvnSampler::new(&[-5.0, -5.0], &cov(s.rho1), 0)?,
        MvnSampler::new(&[2.0, 2.0], &[vec![1.0, 0.0], vec![0.0, 5.0]], 1)?,
        MvnSampler::new(&[-5.0, -5.0], &cov(s.rho3), 2)?,
    ];
    let weibull = WeibullSampler::new(s.weibull_scale, s.weibull_shape)
        .map_err(|e| GmcmError::InvalidParams(format!("weibull: {e}")))?;
    let gamma = GammaSampler::new(s.gamma_shape, s.gamma_scale)
        .map_err(|e| GmcmError::InvalidParams(format!("gamma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scalar = |c: usize, rng: &mut ChaCha8Rng| -> f64 {
        match c {
            0 => rng.random::<f64>(),
            1 => weibull.sample(rng),
            _ => gamma.sample(rng),
        }
    };

    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(2 * n);
    for c in 0..3 {
        let size = n / 3 + usize::from(c < n % 3);
        for _ in 0..size {
            let z = mvn[c].sample(&mut rng);
            match mode {
                ProductMode::Shared => {
                    let f = scalar(c, &mut rng);
                    values.extend(z.iter().map(|v| v * f));
                }
                ProductMode::PerCoordinate => {
                    for v in z {
                        values.push(v * scalar(c, &mut rng));
                    }
                }
            }
            labels.push(c + 1);
        }
    }
    Ok(LabeledDataset {
        data: DataMatrix::from_vec(n, 2, values, Role::Raw)?,
        labels,
        truth: TrueParams::NonGaussian { setting: s, mode },
    })
}

/// Uniform-scale data from the reproducibility model. With `α₁` at 0 or 1
/// the empty component is dropped and every label comes from the other.
pub fn simulate_repro(rp: &ReproParams, p: usize, n: usize, seed: u64) -> Result<LabeledDataset> {
    let edge = rp.alpha1 == 0.0 || rp.alpha1 == 1.0;
    let probe = if edge { ReproParams { alpha1: 0.5, ..*rp } } else { *rp };
    let full = expand_repro(&probe, p)?;
    let (params, label_of) = match rp.alpha1 {
        a if a == 1.0 => (single(&full, 0)?, [1, 1]),
        a if a == 0.0 => (single(&full, 1)?, [2, 2]),
        _ => (full, [1, 2]),
    };
    let mut ds = simulate_gmcm(&params, n, &vec![MarginalSpec::Uniform; p], seed)?;
    for l in &mut ds.labels {
        *l = label_of[*l - 1];
    }
    ds.truth = TrueParams::Repro { params: *rp };
    Ok(ds)
}

fn single(params: &GmcmParams, c: usize) -> Result<GmcmParams> {
    GmcmParams::new(vec![1.0], vec![params.means[c].clone()], vec![params.covariances[c].clone()])
}

/// Random mixture: means uniform on `[−5, 5]^p`, correlation matrices from
/// row-normalized Gaussian factors, Dirichlet(1) weights.
pub fn random_gmcm_params(k: usize, p: usize, seed: u64) -> Result<GmcmParams> {
    if k == 0 || p == 0 {
        return Err(GmcmError::InvalidParams("need K >= 1 and p >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // normalized unit exponentials are Dirichlet(1, …, 1)
    let weights: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let mut weights: Vec<f64> = weights.iter().map(|w| w.max(1e-3)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let drift: f64 = weights.iter().sum::<f64>() - 1.0;
    weights[0] -= drift;

    let means = (0..k)
        .map(|_| (0..p).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let mut covariances = Vec::with_capacity(k);
    for _ in 0..k {
        // p+1 columns keep the Gram matrix comfortably nonsingular
        let cols = p + 1;
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                let r: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / norm).collect()
            })
            .collect();
        let corr: Vec<Vec<f64>> = (0..p)
            .map(|a| {
                (0..p)
                    .map(|b| if a == b { 1.0 } else { rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum() })
                    .collect()
            })
            .collect();
        covariances.push(corr);
    }
    GmcmParams::new(weights, means, covariances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::scaled_ranks;

    fn diag_normal(p: usize) -> GmcmParams {
        GmcmParams::new(
            vec![1.0],
            vec![vec![0.0; p]],
            vec![(0..p).map(|a| (0..p).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect()],
        )
        .unwrap()
    }

    fn ks_statistic(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn setting_table_rows() {
        let s1 = NonGaussianSetting::get(1).unwrap();
        assert_eq!((s1.rho1, s1.rho3, s1.weibull_scale, s1.weibull_shape, s1.gamma_scale, s1.gamma_shape), (0.0, 0.0, 1.0, 2.0, 1.0, 2.0));
        let s2 = NonGaussianSetting::get(2).unwrap();
        assert_eq!((s2.rho1, s2.weibull_scale, s2.gamma_scale), (0.45, 1.0, 1.0));
        let s3 = NonGaussianSetting::get(3).unwrap();
        assert_eq!((s3.rho1, s3.weibull_scale, s3.gamma_scale), (0.0, 1.0, 2.0));
        let s6 = NonGaussianSetting::get(6).unwrap();
        assert_eq!((s6.rho1, s6.weibull_scale, s6.gamma_scale), (0.45, 2.0, 1.0));
        let s8 = NonGaussianSetting::get(8).unwrap();
        assert_eq!((s8.rho1, s8.rho3, s8.weibull_scale, s8.weibull_shape, s8.gamma_scale, s8.gamma_shape), (0.45, 0.45, 2.0, 2.0, 2.0, 2.0));
        assert_eq!(NonGaussianSetting::get(0), Err(GmcmError::InvalidSetting(0)));
        assert_eq!(NonGaussianSetting::get(9), Err(GmcmError::InvalidSetting(9)));
    }

    #[test]
    fn uniform_marginals_pass_ks() {
        let ds = simulate_gmcm(&diag_normal(2), 1000, &[MarginalSpec::Uniform; 2], 4).unwrap();
        // 1% critical value ≈ 1.63/√n
        for j in 0..2 {
            assert!(ks_statistic(ds.data.column(j)) < 1.63 / 1000f64.sqrt());
        }
    }

    #[test]
    fn component_proportions_within_three_se() {
        let params = GmcmParams::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 0.0], vec![3.0, 3.0]],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
        )
        .unwrap();
        let n = 2000;
        let ds = simulate_gmcm(&params, n, &[MarginalSpec::Uniform; 2], 11).unwrap();
        let frac = ds.labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let se = (0.3 * 0.7 / n as f64).sqrt();
        assert!((frac - 0.3).abs() < 3.0 * se);
    }

    #[test]
    fn ranks_ignore_the_marginal_family() {
        let params = random_gmcm_params(3, 2, 5).unwrap();
        let a = simulate_gmcm(&params, 300, &[MarginalSpec::Uniform; 2], 8).unwrap();
        let b = simulate_gmcm(
            &params,
            300,
            &[MarginalSpec::Gamma { shape: 2.0, scale: 1.5 }, MarginalSpec::Weibull { shape: 1.5, scale: 3.0 }],
            8,
        )
        .unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(scaled_ranks(&a.data).unwrap(), scaled_ranks(&b.data).unwrap());
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let spec = SimSpec::NonGaussian { setting: 4, n: 100, mode: ProductMode::Shared, seed: 21 };
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let spec = SimSpec::Repro { params: ReproParams::new(0.25, 0.5, 2.0, 0.25), p: 2, n: 50, seed: 2 };
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
    }

    #[test]
    fn non_gaussian_cluster_sizes() {
        let ds = simulate_non_gaussian(1, 100, 0).unwrap();
        let count = |l| ds.labels.iter().filter(|&&x| x == l).count();
        assert_eq!((count(1), count(2), count(3)), (34, 33, 33));
        assert_eq!(ds.data.ncols(), 2);
    }

    #[test]
    fn weibull_inflates_second_moment() {
        let n = 30_000;
        let ds = simulate_non_gaussian(5, n, 3).unwrap();
        // cluster 2: E[x₁²] = E[z₁²] E[W²] with E[z₁²] = 1 + 4 and E[W²] = sc² Γ(1 + 2/sh) = 4
        let rows: Vec<&[f64]> = ds.data.rows().zip(&ds.labels).filter(|(_, &l)| l == 2).map(|(r, _)| r).collect();
        let m2 = rows.iter().map(|r| r[0] * r[0]).sum::<f64>() / rows.len() as f64;
        assert!((m2 / 20.0 - 1.0).abs() < 0.1, "{m2}");
    }

    #[test]
    fn repro_edge_weights() {
        let ds = simulate_repro(&ReproParams::new(1.0, 0.5, 2.0, 0.25), 2, 200, 1).unwrap();
        assert!(ds.labels.iter().all(|&l| l == 1));
        assert!(ks_statistic(ds.data.column(1)) < 1.63 / 200f64.sqrt());
    }

    #[test]
    fn repro_signal_fraction() {
        let n = 1000;
        let ds = simulate_repro(&ReproParams::new(0.25, 0.5, 2.0, 0.25), 2, n, 17).unwrap();
        let frac = ds.labels.iter().filter(|&&l| l == 2).count() as f64 / n as f64;
        assert!((frac - 0.75).abs() < 3.0 * (0.75 * 0.25 / n as f64).sqrt());
        for j in 0..2 {
            assert!(ks_statistic(ds.data.column(j)) < 1.63 / (n as f64).sqrt());
        }
    }

    #[test]
    fn random_params_are_valid() {
        for seed in 0..20 {
            let g = random_gmcm_params(4, 3, seed).unwrap();
            assert!(g.validate().is_ok());
            for c in 0..4 {
                for j in 0..3 {
                    assert_eq!(g.covariances[c][j][j], 1.0);
                    assert!(g.means[c][j].abs() <= 5.0);
                }
            }
        }
    }

    #[test]
    fn marginal_quantiles() {
        let w = MarginalSpec::Weibull { shape: 2.0, scale: 3.0 };
        // median = scale (ln 2)^{1/shape}
        assert!((w.quantile(0.5).unwrap() - 3.0 * 2f64.ln().sqrt()).abs() < 1e-12);
        let g = MarginalSpec::Gamma { shape: 1.0, scale: 2.0 };
        // shape 1 is exponential with mean 2
        assert!((g.quantile(0.5).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-6);
    }
}
