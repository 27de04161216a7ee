//! Exact copula log-likelihood, its pseudo-likelihood numerator, the
//! correlation-range penalty, and closed-form degeneracy probes.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{GmcmError, Result};
use crate::model::{DataMatrix, GmcmParams, Prepared, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBreakdown {
    pub exact_ll: f64,
    pub pseudo_ll: f64,
    /// `Σ_i Σ_j ln ψ_j(y_ij)`
    pub marginal_ll: f64,
}

/// `(pseudo, marginal)` log-likelihood sums over any scalar type.
pub(crate) fn loglik_parts<T: Scalar>(latent: &DataMatrix, prep: &Prepared<T>) -> (T, T) {
    let p = latent.ncols();
    let mut pseudo = Vec::with_capacity(latent.nrows());
    let mut marginal = Vec::with_capacity(latent.nrows() * p);
    for y in latent.rows() {
        pseudo.push(prep.log_density(y));
        for (j, &v) in y.iter().enumerate() {
            marginal.push(prep.marginal_log_density(v, j));
        }
    }
    (T::sum(&pseudo), T::sum(&marginal))
}

pub(crate) fn check_latent(latent: &DataMatrix, params_p: usize) -> Result<()> {
    if latent.role() != Role::Latent {
        return Err(GmcmError::InvalidData(format!(
            "expected latent observations, got {:?} data",
            latent.role()
        )));
    }
    if latent.ncols() != params_p {
        return Err(GmcmError::InvalidData(format!(
            "data has {} columns, model has {}",
            latent.ncols(),
            params_p
        )));
    }
    Ok(())
}

pub fn exact_loglik(latent: &DataMatrix, params: &GmcmParams) -> Result<LikelihoodBreakdown> {
    check_latent(latent, params.p())?;
    let prep = Prepared::new(&params.mixture())?;
    let (pseudo_ll, marginal_ll) = loglik_parts(latent, &prep);
    Ok(LikelihoodBreakdown {
        exact_ll: pseudo_ll - marginal_ll,
        pseudo_ll,
        marginal_ll,
    })
}

pub fn pseudo_loglik(latent: &DataMatrix, params: &GmcmParams) -> Result<f64> {
    check_latent(latent, params.p())?;
    let prep = Prepared::new(&params.mixture())?;
    Ok(latent.rows().map(|y| prep.log_density(y)).sum())
}

/// `((2ρ − (1 + a)) / (1 − a))^(2b)` with `a = −1/(p − 1)`: near zero inside
/// `(a, 1)` and explosive outside.
pub fn rho_penalty(rho: f64, p: usize, b: u32) -> f64 {
    rho_penalty_generic(rho, p, b)
}

pub(crate) fn rho_penalty_generic<T: Scalar>(rho: T, p: usize, b: u32) -> T {
    let a = rho_lower_bound(p);
    ((rho * 2.0 - (1.0 + a)) / (1.0 - a)).powi(2 * b as i32)
}

/// Smallest common correlation keeping an equicorrelation matrix PD.
pub fn rho_lower_bound(p: usize) -> f64 {
    -1.0 / (p as f64 - 1.0)
}

/// Two components, two dimensions, two observations sitting on the means.
///
/// `sigma[k][j]` is the standard deviation of component `k` along `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSetup {
    pub weights: [f64; 2],
    pub mu: [[f64; 2]; 2],
    pub sigma: [[f64; 2]; 2],
    pub rho: [f64; 2],
}

impl Default for ProbeSetup {
    fn default() -> Self {
        // the mean difference must not be parallel to (1, 1), otherwise the
        // far-point term of a unit-correlation component does not vanish
        Self {
            weights: [0.5, 0.5],
            mu: [[0.0, 0.0], [2.0, -2.0]],
            sigma: [[1.0, 1.0], [1.0, 1.0]],
            rho: [0.0, 0.0],
        }
    }
}

impl ProbeSetup {
    pub fn params(&self) -> Result<GmcmParams> {
        let cov = |k: usize| {
            let [s1, s2] = self.sigma[k];
            let c = self.rho[k] * s1 * s2;
            vec![vec![s1 * s1, c], vec![c, s2 * s2]]
        };
        GmcmParams::new(
            self.weights.to_vec(),
            self.mu.iter().map(|m| m.to_vec()).collect(),
            vec![cov(0), cov(1)],
        )
    }

    pub fn points(&self) -> DataMatrix {
        DataMatrix::from_rows(&[self.mu[0].to_vec(), self.mu[1].to_vec()], Role::Latent)
            .expect("probe means are finite")
    }

    /// Component `k` density (without 2π) at the mean of the other component.
    fn cross_term(&self, k: usize) -> f64 {
        let [s1, s2] = self.sigma[k];
        let r = self.rho[k];
        let d1 = self.mu[0][0] - self.mu[1][0];
        let d2 = self.mu[0][1] - self.mu[1][1];
        let q = d1 * d1 / (2.0 * s1 * s1) + d2 * d2 / (2.0 * s2 * s2) - r * d1 * d2 / (s1 * s2);
        self.peak(k) * (-q / (1.0 - r * r)).exp()
    }

    fn peak(&self, k: usize) -> f64 {
        let [s1, s2] = self.sigma[k];
        self.weights[k] / ((1.0 - self.rho[k] * self.rho[k]).sqrt() * s1 * s2)
    }

    fn marginal_peak(&self, k: usize, j: usize) -> f64 {
        self.weights[k] / self.sigma[k][j]
    }

    fn marginal_cross(&self, k: usize, j: usize) -> f64 {
        let d = self.mu[0][j] - self.mu[1][j];
        let s = self.sigma[k][j];
        self.marginal_peak(k, j) * (-d * d / (2.0 * s * s)).exp()
    }

    /// Closed-form mixture log-likelihood of the two points, 2π dropped.
    pub fn gmm_ll(&self) -> f64 {
        (self.peak(0) + self.cross_term(1)).ln() + (self.peak(1) + self.cross_term(0)).ln()
    }

    /// Closed-form copula log-likelihood of the two points. The 2π factors
    /// cancel, so this equals the exact log-likelihood.
    pub fn gmcm_ll(&self) -> f64 {
        let mut ll = self.gmm_ll();
        for j in 0..2 {
            ll -= (self.marginal_peak(0, j) + self.marginal_cross(1, j)).ln();
            ll -= (self.marginal_peak(1, j) + self.marginal_cross(0, j)).ln();
        }
        ll
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub value: f64,
    pub gmcm_ll: f64,
    pub gmm_ll: f64,
}

/// Shrinks the standard deviation of component 1 along dimension 1.
pub fn degeneracy_probe_sigma(setup: &ProbeSetup, sigmas: &[f64]) -> Vec<ProbePoint> {
    sigmas
        .iter()
        .map(|&s| {
            let mut at = *setup;
            at.sigma[0][0] = s;
            ProbePoint {
                value: s,
                gmcm_ll: at.gmcm_ll(),
                gmm_ll: at.gmm_ll(),
            }
        })
        .collect()
}

/// Pushes the correlation of component 1 toward one.
pub fn degeneracy_probe_rho(setup: &ProbeSetup, rhos: &[f64]) -> Vec<ProbePoint> {
    rhos.iter()
        .map(|&r| {
            let mut at = *setup;
            at.rho[0] = r;
            ProbePoint {
                value: r,
                gmcm_ll: at.gmcm_ll(),
                gmm_ll: at.gmm_ll(),
            }
        })
        .collect()
}
