//! Clustering output, partition agreement, and the two-component
//! reproducibility model with its idr and adjusted IDR summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{GmcmError, Result};
use crate::likelihood::{loglik_parts, rho_lower_bound, rho_penalty_generic};
use crate::model::{DataMatrix, GmcmParams, LatentMixture, Prepared};
use crate::optimizer::{run_ascent, FitConfig, FitReport, Objective};
use crate::pem::{e_step, run_pem, Responsibilities};

/// Per-row argmax of the posterior memberships, 1-based; ties go to the
/// lowest component index.
pub fn map_labels(latent: &DataMatrix, params: &GmcmParams) -> Result<Vec<usize>> {
    let resp = e_step(latent, params)?;
    Ok((0..resp.nrows()).map(|i| argmax_first(resp.row(i)) + 1).collect())
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = c;
        }
    }
    best
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GmcmError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(GmcmError::Precondition("ARI needs at least two labels".into()));
    }
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    // sort before summing so the result does not depend on hash order
    let sorted_sum = |vals: Vec<f64>| {
        let mut v = vals;
        v.sort_by(f64::total_cmp);
        v.iter().map(|&x| choose2(x)).sum::<f64>()
    };
    let index = sorted_sum(table.into_values().collect());
    let sum_a = sorted_sum(rows.into_values().collect());
    let sum_b = sorted_sum(cols.into_values().collect());
    let expected = sum_a * sum_b / choose2(a.len() as f64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both partitions trivial (all-in-one or all-singletons)
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Two-component reproducibility model: a null component at the origin
/// with identity covariance and a signal component with common mean `mu`,
/// common s.d. `sigma` and common correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproParams {
    pub alpha1: f64,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl ReproParams {
    pub fn new(alpha1: f64, mu: f64, sigma: f64, rho: f64) -> Self {
        Self { alpha1, mu, sigma, rho }
    }

    fn check(&self, p: usize) -> Result<()> {
        if p < 2 {
            return Err(GmcmError::Precondition(
                "the reproducibility model needs at least two columns".into(),
            ));
        }
        if !(self.alpha1 >= 0.0 && self.alpha1 <= 1.0) {
            return Err(GmcmError::InvalidParams(format!("alpha1 = {} outside [0, 1]", self.alpha1)));
        }
        if !(self.mu > 0.0 && self.sigma > 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(GmcmError::InvalidParams("mu and sigma must be positive".into()));
        }
        let lower = rho_lower_bound(p);
        if !(self.rho > lower && self.rho < 1.0) {
            return Err(GmcmError::RhoOutOfRange { rho: self.rho, lower });
        }
        Ok(())
    }

    fn signal_covariance(&self, p: usize) -> Vec<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        (0..p)
            .map(|a| (0..p).map(|b| if a == b { s2 } else { self.rho * s2 }).collect())
            .collect()
    }

    /// Recover the four scalars from an expanded two-component model.
    pub fn from_expanded(params: &GmcmParams) -> Result<Self> {
        if params.k() != 2 || params.p() < 2 {
            return Err(GmcmError::InvalidParams("expected a two-component model with p >= 2".into()));
        }
        let s2 = params.covariances[1][0][0];
        Ok(Self {
            alpha1: params.weights[0],
            mu: params.means[1][0],
            sigma: s2.sqrt(),
            rho: params.covariances[1][0][1] / s2,
        })
    }
}

/// `K = 2` model with weights `(α₁, 1 − α₁)`; requires `0 < α₁ < 1`.
pub fn expand_repro(rp: &ReproParams, p: usize) -> Result<GmcmParams> {
    rp.check(p)?;
    let identity = (0..p)
        .map(|a| (0..p).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect();
    GmcmParams::new(
        vec![rp.alpha1, 1.0 - rp.alpha1],
        vec![vec![0.0; p], vec![rp.mu; p]],
        vec![identity, rp.signal_covariance(p)],
    )
}

/// Posterior probability that each subject belongs to the null component.
pub fn idr(latent: &DataMatrix, rp: &ReproParams) -> Result<Vec<f64>> {
    let p = latent.ncols();
    rp.check(p)?;
    if rp.alpha1 == 0.0 || rp.alpha1 == 1.0 {
        return Ok(vec![rp.alpha1; latent.nrows()]);
    }
    let resp = e_step(latent, &expand_repro(rp, p)?)?;
    Ok((0..resp.nrows()).map(|i| resp.get(i, 0)).collect())
}

/// Running mean of the sorted idr values, mapped back to the input order.
/// Tied idr values share the mean taken through the end of their tie group.
pub fn adjusted_idr(idr: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..idr.len()).collect();
    order.sort_by(|&a, &b| idr[a].total_cmp(&idr[b]));
    let mut out = vec![0.0; idr.len()];
    let mut sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && idr[order[end + 1]] == idr[order[start]] {
            end += 1;
        }
        for &i in &order[start..=end] {
            sum += idr[i];
        }
        let mean = sum / (end + 1) as f64;
        for &i in &order[start..=end] {
            out[i] = mean;
        }
        start = end + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproConfig {
    pub fit: FitConfig,
    /// Half-exponent `b` of the correlation penalty.
    pub penalty_b: u32,
    pub threshold: f64,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            penalty_b: 50,
            threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproResult {
    pub params: ReproParams,
    pub idr: Vec<f64>,
    pub adjusted_idr: Vec<f64>,
    pub reproducible: Vec<bool>,
    pub fit_report: FitReport,
}

impl ReproResult {
    fn assemble(params: ReproParams, fit_report: FitReport, threshold: f64) -> Result<Self> {
        let idr = idr(&fit_report.final_latent, &params)?;
        let adjusted = adjusted_idr(&idr);
        let reproducible = adjusted.iter().map(|&v| v < threshold).collect();
        Ok(Self {
            params,
            idr,
            adjusted_idr: adjusted,
            reproducible,
            fit_report,
        })
    }

    /// Subjects assigned to the signal component by the MAP rule.
    pub fn map_reproducible(&self) -> Vec<bool> {
        self.idr.iter().map(|&v| v < 0.5).collect()
    }
}

/// Keeps ρ strictly inside the admissible interval after each step.
const RHO_MARGIN: f64 = 1e-6;

struct ReproObjective {
    p: usize,
    b: u32,
}

impl ReproObjective {
    fn decode(&self, x: &[f64]) -> ReproParams {
        ReproParams {
            alpha1: 1.0 / (1.0 + (-x[0]).exp()),
            mu: x[1].exp(),
            sigma: x[2].exp(),
            rho: x[3],
        }
    }

    fn encode(rp: &ReproParams) -> Vec<f64> {
        vec![(rp.alpha1 / (1.0 - rp.alpha1)).ln(), rp.mu.ln(), rp.sigma.ln(), rp.rho]
    }
}

impl Objective for ReproObjective {
    fn params(&self, x: &[f64]) -> Result<GmcmParams> {
        expand_repro(&self.decode(x), self.p)
    }

    fn parts<T: Scalar>(&self, x: &[T], latent: &DataMatrix) -> Result<(T, T, T)> {
        let p = self.p;
        let zero = x[0].lift(0.0);
        let one = x[0].lift(1.0);
        // ln α₁ = −ln(1 + e^{−z}), ln(1 − α₁) = −ln(1 + e^{z})
        let log_alpha = -T::log_sum_exp(&[zero, -x[0]]);
        let log_beta = -T::log_sum_exp(&[zero, x[0]]);
        let mu = x[1].exp();
        let s2 = (x[2] * 2.0).exp();
        let rho = x[3];

        let mut means = vec![zero; p];
        means.extend(std::iter::repeat_n(mu, p));
        let mut covariances = Vec::with_capacity(2 * p * p);
        for a in 0..p {
            for b in 0..p {
                covariances.push(if a == b { one } else { zero });
            }
        }
        for a in 0..p {
            for b in 0..p {
                covariances.push(if a == b { s2 } else { rho * s2 });
            }
        }
        let mix = LatentMixture {
            k: 2,
            p,
            log_weights: vec![log_alpha, log_beta],
            means,
            covariances,
        };
        let prep = Prepared::new(&mix)?;
        let (pseudo, marginal) = loglik_parts(latent, &prep);
        Ok((pseudo, marginal, rho_penalty_generic(rho, p, self.b)))
    }

    fn project(&self, x: &mut [f64]) {
        let lower = rho_lower_bound(self.p) + RHO_MARGIN;
        x[3] = x[3].clamp(lower, 1.0 - RHO_MARGIN);
    }
}

fn check_repro_start(ranks: &DataMatrix, init: &ReproParams) -> Result<usize> {
    let p = ranks.ncols();
    init.check(p)?;
    if !(init.alpha1 > 0.0 && init.alpha1 < 1.0) {
        return Err(GmcmError::InvalidParams("initial alpha1 must lie in (0, 1)".into()));
    }
    Ok(p)
}

/// Adam ascent on the exact log-likelihood of the reproducibility model,
/// minus the correlation penalty.
pub fn fit_repro(ranks: &DataMatrix, init: &ReproParams, config: &ReproConfig) -> Result<ReproResult> {
    let p = check_repro_start(ranks, init)?;
    let obj = ReproObjective { p, b: config.penalty_b };
    // report parameters are the last evaluated point, not the point after
    // the final step, so they match the last trace entry
    let (report, _) = run_ascent(&obj, ranks, ReproObjective::encode(init), &[true; 4], &config.fit)?;
    let params = ReproParams::from_expanded(&report.final_params)?;
    ReproResult::assemble(params, report, config.threshold)
}

/// Closed-form M-step of the reproducibility model under the same
/// responsibilities a free GMM update would use.
pub fn repro_m_step(latent: &DataMatrix, resp: &Responsibilities) -> Result<GmcmParams> {
    let (n, p) = (latent.nrows(), latent.ncols());
    let mass = resp.mass();
    // the null component has no free moments, only its weight
    if !(mass[1] > 1e-8) {
        return Err(GmcmError::CollapsedComponent { component: 1 });
    }
    let w2 = mass[1];
    let mut mu = 0.0;
    for i in 0..n {
        mu += resp.get(i, 1) * latent.row(i).iter().sum::<f64>();
    }
    mu /= w2 * p as f64;
    let mut var = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        let r = resp.get(i, 1);
        let y = latent.row(i);
        let centered: Vec<f64> = y.iter().map(|v| v - mu).collect();
        let s: f64 = centered.iter().sum();
        let ss: f64 = centered.iter().map(|c| c * c).sum();
        var += r * ss;
        cross += r * (s * s - ss);
    }
    var /= w2 * p as f64;
    let rho = cross / (w2 * (p * (p - 1)) as f64 * var);
    let lower = rho_lower_bound(p) + RHO_MARGIN;
    let rp = ReproParams {
        alpha1: (mass[0] / (mass[0] + mass[1])).max(f64::MIN_POSITIVE),
        mu: mu.max(1e-6),
        sigma: var.sqrt(),
        rho: rho.clamp(lower, 1.0 - RHO_MARGIN),
    };
    expand_repro(&rp, p)
}

/// Pseudo-EM under the reproducibility constraints.
pub fn fit_pem_repro(ranks: &DataMatrix, init: &ReproParams, config: &ReproConfig) -> Result<ReproResult> {
    let p = check_repro_start(ranks, init)?;
    let report = run_pem(ranks, expand_repro(init, p)?, &config.fit, false, repro_m_step)?;
    let params = ReproParams::from_expanded(&report.final_params)?;
    ReproResult::assemble(params, report, config.threshold)
}
