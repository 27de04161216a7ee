//! Pseudo-EM: alternate a latent reset with one EM update of the
//! pseudo-likelihood.

use crate::error::{GmcmError, Result};
use crate::likelihood::exact_loglik;
use crate::marginal::reset_latent_with;
use crate::model::{DataMatrix, GmcmParams, Prepared, Role};
use crate::optimizer::{
    init_params, monotonicity_check, FitConfig, FitReport, InitStrategy, MonotonicityViolations,
    ResetConditionCounts, TraceEntry, MONOTONE_TOLERANCE,
};
use crate::autodiff::log_sum_exp;

const RIDGE: f64 = 1e-8;
const MIN_MASS: f64 = 1e-8;

/// Row-stochastic `n×K` posterior memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(GmcmError::InvalidData("responsibility rows must be non-empty and equal length".into()));
        }
        Ok(Self {
            n: rows.len(),
            k,
            values: rows.concat(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncomponents(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.k + c]
    }

    /// Effective number of observations per component.
    pub fn mass(&self) -> Vec<f64> {
        (0..self.k).map(|c| (0..self.n).map(|i| self.get(i, c)).sum()).collect()
    }
}

/// `r_ik ∝ π_k φ(y_i; μ_k, Σ_k)`, normalized in the log domain.
pub fn e_step(latent: &DataMatrix, params: &GmcmParams) -> Result<Responsibilities> {
    if latent.ncols() != params.p() {
        return Err(GmcmError::InvalidData(format!(
            "data has {} columns, model has {}",
            latent.ncols(),
            params.p()
        )));
    }
    let prep = Prepared::new(&params.mixture())?;
    let k = params.k();
    let mut values = Vec::with_capacity(latent.nrows() * k);
    for y in latent.rows() {
        let terms: Vec<f64> = prep.component_log_terms(y);
        let norm = log_sum_exp(&terms);
        values.extend(terms.iter().map(|t| (t - norm).exp()));
    }
    Ok(Responsibilities {
        n: latent.nrows(),
        k,
        values,
    })
}

/// Weighted GMM updates with a `1e-8·I` ridge on every covariance.
pub fn m_step(latent: &DataMatrix, resp: &Responsibilities) -> Result<GmcmParams> {
    let (n, p, k) = (latent.nrows(), latent.ncols(), resp.k);
    if resp.n != n {
        return Err(GmcmError::LengthMismatch { left: n, right: resp.n });
    }
    let mass = resp.mass();
    if let Some(c) = mass.iter().position(|&m| !(m > MIN_MASS)) {
        return Err(GmcmError::CollapsedComponent { component: c });
    }
    let total: f64 = mass.iter().sum();
    let weights = mass.iter().map(|m| m / total).collect();
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for c in 0..k {
        let mut mu = vec![0.0; p];
        for (i, y) in latent.rows().enumerate() {
            let r = resp.get(i, c);
            for j in 0..p {
                mu[j] += r * y[j];
            }
        }
        mu.iter_mut().for_each(|m| *m /= mass[c]);
        let mut cov = vec![vec![0.0; p]; p];
        for (i, y) in latent.rows().enumerate() {
            let r = resp.get(i, c);
            for a in 0..p {
                for b in 0..=a {
                    cov[a][b] += r * (y[a] - mu[a]) * (y[b] - mu[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..=a {
                cov[a][b] /= mass[c];
                cov[b][a] = cov[a][b];
            }
            cov[a][a] += RIDGE;
        }
        means.push(mu);
        covariances.push(cov);
    }
    GmcmParams::new(weights, means, covariances)
}

/// Shared PEM driver; `update` maps (latent, responsibilities) to new parameters.
pub(crate) fn run_pem<F>(
    ranks: &DataMatrix,
    start: GmcmParams,
    config: &FitConfig,
    freeze_latent: bool,
    update: F,
) -> Result<FitReport>
where
    F: Fn(&DataMatrix, &Responsibilities) -> Result<GmcmParams>,
{
    config.validate()?;
    if ranks.role() != Role::Rank {
        return Err(GmcmError::InvalidData("fitting expects a rank matrix".into()));
    }
    let mut params = start;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut violations = MonotonicityViolations::default();
    let mut conditions = ResetConditionCounts::default();
    let mut clamp_warnings = 0;
    let mut converged = false;
    let mut latent: Option<DataMatrix> = None;

    for t in 0..config.max_iterations {
        let current = match (&latent, freeze_latent) {
            (Some(y), true) => y.clone(),
            _ => {
                let reset = reset_latent_with(ranks, &params, &config.reset).map_err(|e| e.at(t))?;
                clamp_warnings += reset.clamped;
                if let Some(old) = &latent {
                    let c = monotonicity_check(old, &reset.latent, &params)?;
                    conditions.distance_to_means += c.distance_to_means;
                    conditions.upward_move += c.upward_move;
                    conditions.downward_move += c.downward_move;
                }
                reset.latent
            }
        };
        let b = exact_loglik(&current, &params).map_err(|e| e.at(t))?;
        let entry = TraceEntry {
            exact_ll: b.exact_ll,
            pseudo_ll: b.pseudo_ll,
        };
        if let Some(prev) = trace.last() {
            let drop = prev.exact_ll - entry.exact_ll;
            if drop > MONOTONE_TOLERANCE {
                violations.count += 1;
                violations.worst_drop = violations.worst_drop.max(drop);
            }
            converged = (entry.pseudo_ll - prev.pseudo_ll).abs() < config.convergence_gamma;
        }
        trace.push(entry);
        latent = Some(current);
        if converged || t + 1 == config.max_iterations {
            break;
        }
        let y = latent.as_ref().expect("set above");
        let resp = e_step(y, &params).map_err(|e| e.at(t))?;
        params = update(y, &resp).map_err(|e| e.at(t))?;
    }

    Ok(FitReport {
        iterations_used: trace.len(),
        trace,
        final_params: params,
        final_latent: latent.expect("at least one iteration runs"),
        converged,
        monotonicity_violations: violations,
        clamp_warnings,
        reset_conditions: conditions,
    })
}

/// Pseudo-EM from the same starting point an AD fit would use.
pub fn fit_pem(ranks: &DataMatrix, k: usize, init: &InitStrategy, config: &FitConfig) -> Result<FitReport> {
    fit_pem_with(ranks, k, init, config, false)
}

/// `freeze_latent` keeps the first latent reset for the whole run, which
/// turns the loop into plain GMM-EM.
#[doc(hidden)]
pub fn fit_pem_with(
    ranks: &DataMatrix,
    k: usize,
    init: &InitStrategy,
    config: &FitConfig,
    freeze_latent: bool,
) -> Result<FitReport> {
    let mut u = init_params(ranks, k, init, config.seed)?;
    if config.anchor {
        u = u.anchor_first_component();
    }
    run_pem(ranks, u.to_constrained()?, config, freeze_latent, m_step)
}
