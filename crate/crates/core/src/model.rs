//! Mixture parameterizations and Gaussian mixture densities.
//!
//! [`GmcmParams`] is the validated, constrained form (weights on the
//! simplex, positive definite covariances). [`UnconstrainedParams`] is the
//! free optimization space: log-weight scores mapped through a softmax and
//! square factors `V` with `Σ = V Vᵀ`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, Scalar};
use crate::error::{GmcmError, Result};
use crate::linalg;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which kind of values a [`DataMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Raw,
    Rank,
    Latent,
}

/// Row-major `n×p` matrix of finite observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    role: Role,
}

impl DataMatrix {
    pub fn from_rows(rows: &[Vec<f64>], role: Role) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(GmcmError::InvalidData("ragged rows".into()));
        }
        Self::from_vec(rows.len(), p, rows.concat(), role)
    }

    pub fn from_vec(n: usize, p: usize, values: Vec<f64>, role: Role) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(GmcmError::InvalidData(format!("empty matrix ({n}x{p})")));
        }
        if values.len() != n * p {
            return Err(GmcmError::InvalidData(format!(
                "{} values for a {n}x{p} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(GmcmError::InvalidData(format!(
                "non-finite value at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        if role == Role::Rank {
            if let Some(pos) = values.iter().position(|&v| v <= 0.0 || v >= 1.0) {
                return Err(GmcmError::InvalidData(format!(
                    "rank value {} at row {}, column {} is outside (0, 1)",
                    values[pos],
                    pos / p,
                    pos % p
                )));
            }
        }
        Ok(Self { n, p, values, role })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.p)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Constrained mixture parameters θ = (π, μ, Σ) in latent units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmcmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl GmcmParams {
    /// Validates and builds a parameter set.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let params = Self {
            weights,
            means,
            covariances,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.means.first().map(Vec::len).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let p = self.p();
        if k == 0 || p == 0 {
            return Err(GmcmError::InvalidParams("need K >= 1 and p >= 1".into()));
        }
        if self.means.len() != k || self.covariances.len() != k {
            return Err(GmcmError::InvalidParams(format!(
                "{k} weights but {} means and {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(GmcmError::InvalidParams(
                "weights must be strictly positive".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GmcmError::InvalidParams(format!(
                "weights sum to {total}, not 1"
            )));
        }
        for c in 0..k {
            if self.means[c].len() != p || self.means[c].iter().any(|m| !m.is_finite()) {
                return Err(GmcmError::InvalidParams(format!(
                    "mean {c} must hold {p} finite values"
                )));
            }
            let cov = &self.covariances[c];
            if cov.len() != p || cov.iter().any(|r| r.len() != p) {
                return Err(GmcmError::InvalidParams(format!(
                    "covariance {c} must be {p}x{p}"
                )));
            }
            let flat = cov.concat();
            if linalg::asymmetry(&flat, p) > 1e-12 {
                return Err(GmcmError::InvalidParams(format!(
                    "covariance {c} is not symmetric"
                )));
            }
            if linalg::cholesky(&flat, p).is_none() {
                return Err(GmcmError::NonPositiveDefinite { component: c });
            }
        }
        Ok(())
    }

    /// Relabels components: component `c` of the result is `order[c]` here.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            weights: order.iter().map(|&c| self.weights[c]).collect(),
            means: order.iter().map(|&c| self.means[c].clone()).collect(),
            covariances: order.iter().map(|&c| self.covariances[c].clone()).collect(),
        }
    }

    /// Correlation between dimensions `a` and `b` in component `c`.
    pub fn correlation(&self, c: usize, a: usize, b: usize) -> f64 {
        let s = &self.covariances[c];
        s[a][b] / (s[a][a] * s[b][b]).sqrt()
    }

    /// Same parameters restricted to dimensions `dims`.
    pub fn project(&self, dims: &[usize]) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| dims.iter().map(|&d| m[d]).collect())
                .collect(),
            covariances: self
                .covariances
                .iter()
                .map(|s| {
                    dims.iter()
                        .map(|&a| dims.iter().map(|&b| s[a][b]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub(crate) fn mixture(&self) -> LatentMixture<f64> {
        LatentMixture {
            k: self.k(),
            p: self.p(),
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            means: self.means.concat(),
            covariances: self.covariances.iter().map(|c| c.concat()).collect::<Vec<_>>().concat(),
        }
    }
}

/// Flat mixture parameters over a generic scalar, the common currency of
/// the likelihood code.
#[derive(Debug, Clone)]
pub(crate) struct LatentMixture<T> {
    pub k: usize,
    pub p: usize,
    pub log_weights: Vec<T>,
    /// `k*p`, component-major
    pub means: Vec<T>,
    /// `k*p*p`, component-major, row-major within a component
    pub covariances: Vec<T>,
}

impl<T: Scalar> LatentMixture<T> {
    /// Softmax weights via log-sum-exp and `Σ = V Vᵀ`.
    pub fn from_unconstrained(alpha: &[T], means: &[T], factors: &[T], k: usize, p: usize) -> Self {
        let norm = T::log_sum_exp(alpha);
        let log_weights = alpha.iter().map(|&a| a - norm).collect();
        let covariances = (0..k)
            .flat_map(|c| linalg::gram(&factors[c * p * p..(c + 1) * p * p], p))
            .collect();
        Self {
            k,
            p,
            log_weights,
            means: means.to_vec(),
            covariances,
        }
    }
}

/// Free optimization variables: scores `alpha`, means and factors `V_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    pub alpha: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl UnconstrainedParams {
    /// Zero scores, identity factors.
    pub fn with_means(means: Vec<Vec<f64>>) -> Self {
        let k = means.len();
        let p = means.first().map(Vec::len).unwrap_or(0);
        Self {
            alpha: vec![0.0; k],
            means,
            factors: vec![identity_rows(p); k],
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.means.first().map(Vec::len).unwrap_or(0)
    }

    /// Number of free scalars: `K + K·p + K·p²`.
    pub fn len(&self) -> usize {
        let (k, p) = (self.k(), self.p());
        k + k * p + k * p * p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat layout `[alpha | means | factors]`, component-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.alpha);
        for m in &self.means {
            out.extend_from_slice(m);
        }
        for f in &self.factors {
            for r in f {
                out.extend_from_slice(r);
            }
        }
        out
    }

    pub fn from_flat(flat: &[f64], k: usize, p: usize) -> Self {
        assert_eq!(flat.len(), k + k * p + k * p * p, "flat parameter length");
        let alpha = flat[..k].to_vec();
        let means = flat[k..k + k * p].chunks(p).map(<[f64]>::to_vec).collect();
        let factors = flat[k + k * p..]
            .chunks(p * p)
            .map(|f| f.chunks(p).map(<[f64]>::to_vec).collect())
            .collect();
        Self {
            alpha,
            means,
            factors,
        }
    }

    /// Softmax of scores and `V Vᵀ` covariances.
    pub fn to_constrained(&self) -> Result<GmcmParams> {
        let (k, p) = (self.k(), self.p());
        if k == 0 || p == 0 {
            return Err(GmcmError::InvalidParams("need K >= 1 and p >= 1".into()));
        }
        for (c, f) in self.factors.iter().enumerate() {
            if linalg::determinant(&f.concat(), p).abs() <= 1e-300 {
                return Err(GmcmError::SingularFactor { component: c });
            }
        }
        let norm = log_sum_exp(&self.alpha);
        // floor at the smallest normal so extreme scores keep every weight positive
        let mut weights: Vec<f64> = self
            .alpha
            .iter()
            .map(|a| (a - norm).exp().max(f64::MIN_POSITIVE))
            .collect();
        // absorb the last ulp of rounding so the simplex check is exact
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let covariances = self
            .factors
            .iter()
            .map(|f| {
                let g = linalg::gram(&f.concat(), p);
                let mut rows: Vec<Vec<f64>> = g.chunks(p).map(<[f64]>::to_vec).collect();
                // exact symmetry
                for a in 0..p {
                    for b in 0..a {
                        rows[b][a] = rows[a][b];
                    }
                }
                rows
            })
            .collect();
        GmcmParams::new(weights, self.means.clone(), covariances)
    }

    /// Copy with component 0 pinned to zero mean and identity factor.
    pub fn anchor_first_component(&self) -> Self {
        let mut out = self.clone();
        if let Some(m) = out.means.first_mut() {
            m.iter_mut().for_each(|x| *x = 0.0);
        }
        if let Some(f) = out.factors.first_mut() {
            *f = identity_rows(self.p());
        }
        out
    }
}

/// Which flat entries may move during optimization.
///
/// `anchor` freezes the mean and factor of component 0; `diagonal` freezes
/// every off-diagonal factor entry so covariances stay diagonal.
pub fn trainable_mask(k: usize, p: usize, anchor: bool, diagonal: bool) -> Vec<bool> {
    let mut mask = vec![true; k + k * p + k * p * p];
    if anchor && k > 0 {
        for e in &mut mask[k..k + p] {
            *e = false;
        }
        for e in &mut mask[k + k * p..k + k * p + p * p] {
            *e = false;
        }
    }
    if diagonal {
        for c in 0..k {
            for a in 0..p {
                for b in 0..p {
                    if a != b {
                        mask[k + k * p + c * p * p + a * p + b] = false;
                    }
                }
            }
        }
    }
    mask
}

fn identity_rows(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|a| (0..p).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Precomputed per-component quantities for density evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<T> {
    pub k: usize,
    pub p: usize,
    /// `ln π_k − ½p ln 2π − ½ ln|Σ_k|`
    pub log_norm: Vec<T>,
    pub means: Vec<T>,
    pub chol: Vec<T>,
    pub chol_inv_diag: Vec<T>,
    /// `ln π_k − ½ ln 2π − ln √Σ_kjj`, indexed `k*p + j`
    pub marg_log_norm: Vec<T>,
    pub marg_inv_sd: Vec<T>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(m: &LatentMixture<T>) -> Result<Self> {
        let (k, p) = (m.k, m.p);
        let mut log_norm = Vec::with_capacity(k);
        let mut chol = Vec::with_capacity(k * p * p);
        let mut chol_inv_diag = Vec::with_capacity(k * p);
        let mut marg_log_norm = Vec::with_capacity(k * p);
        let mut marg_inv_sd = Vec::with_capacity(k * p);
        for c in 0..k {
            let cov = &m.covariances[c * p * p..(c + 1) * p * p];
            let l = linalg::cholesky(cov, p).ok_or(GmcmError::NonPositiveDefinite { component: c })?;
            let log_diag: Vec<T> = (0..p).map(|a| l[a * p + a].ln()).collect();
            log_norm.push(m.log_weights[c] - T::sum(&log_diag) - 0.5 * p as f64 * LN_2PI);
            for a in 0..p {
                let d = l[a * p + a];
                chol_inv_diag.push(d.lift(1.0) / d);
            }
            chol.extend_from_slice(&l);
            for j in 0..p {
                let var = cov[j * p + j];
                marg_log_norm.push(m.log_weights[c] - var.ln() * 0.5 - 0.5 * LN_2PI);
                marg_inv_sd.push(var.lift(1.0) / var.sqrt());
            }
        }
        Ok(Self {
            k,
            p,
            log_norm,
            means: m.means.clone(),
            chol,
            chol_inv_diag,
            marg_log_norm,
            marg_inv_sd,
        })
    }

    /// `ln π_k φ(y; μ_k, Σ_k)` for each component.
    pub fn component_log_terms(&self, y: &[f64]) -> Vec<T> {
        let p = self.p;
        (0..self.k)
            .map(|c| {
                let diff: Vec<T> = (0..p).map(|j| self.means[c * p + j] - y[j]).collect();
                let z = linalg::forward_solve(
                    &self.chol[c * p * p..(c + 1) * p * p],
                    &self.chol_inv_diag[c * p..(c + 1) * p],
                    &diff,
                    p,
                );
                let sq: Vec<T> = z.iter().map(|&v| v.square()).collect();
                self.log_norm[c] - T::sum(&sq) * 0.5
            })
            .collect()
    }

    /// `ln ψ_j(y)`, the log marginal mixture density along dimension `j`.
    pub fn marginal_log_density(&self, y: f64, j: usize) -> T {
        let p = self.p;
        let terms: Vec<T> = (0..self.k)
            .map(|c| {
                let z = (self.means[c * p + j] - y) * self.marg_inv_sd[c * p + j];
                self.marg_log_norm[c * p + j] - z.square() * 0.5
            })
            .collect();
        T::log_sum_exp(&terms)
    }

    pub fn log_density(&self, y: &[f64]) -> T {
        T::log_sum_exp(&self.component_log_terms(y))
    }
}

/// Natural log of the mixture density `Σ π_k φ(x; μ_k, Σ_k)`.
pub fn gmm_logpdf(x: &[f64], params: &GmcmParams) -> Result<f64> {
    if x.len() != params.p() {
        return Err(GmcmError::InvalidData(format!(
            "point has {} coordinates, model has {}",
            x.len(),
            params.p()
        )));
    }
    Ok(Prepared::new(&params.mixture())?.log_density(x))
}

/// Log of the univariate mixture density along dimension `j`.
pub fn marginal_gmm_logpdf(y: f64, j: usize, params: &GmcmParams) -> f64 {
    let terms: Vec<f64> = (0..params.k())
        .map(|c| {
            let var = params.covariances[c][j][j];
            let z = (y - params.means[c][j]) / var.sqrt();
            params.weights[c].ln() - 0.5 * LN_2PI - 0.5 * var.ln() - 0.5 * z * z
        })
        .collect();
    log_sum_exp(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unconstrained(alpha: Vec<f64>, p: usize) -> UnconstrainedParams {
        let k = alpha.len();
        UnconstrainedParams {
            alpha,
            means: vec![vec![0.0; p]; k],
            factors: vec![identity_rows(p); k],
        }
    }

    #[test]
    fn softmax_of_equal_scores() {
        let g = unconstrained(vec![0.0; 3], 2).to_constrained().unwrap();
        for w in &g.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(g.covariances[0], identity_rows(2));
    }

    #[test]
    fn softmax_of_log_two() {
        let g = unconstrained(vec![2f64.ln(), 0.0], 1).to_constrained().unwrap();
        assert!((g.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let g = unconstrained(vec![1000.0, 1001.0], 1).to_constrained().unwrap();
        // scores shifted to (0, 1): e^0/(e^0+e^1)
        let expect = 1.0 / (1.0 + 1f64.exp());
        assert!((g.weights[0] - expect).abs() < 1e-12);
        assert!((g.weights[0] - 0.2689).abs() < 1e-4);
        assert!((g.weights[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn singular_factor_is_rejected() {
        let mut u = unconstrained(vec![0.0, 0.0], 2);
        u.factors[1] = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert_eq!(
            u.to_constrained(),
            Err(GmcmError::SingularFactor { component: 1 })
        );
    }

    #[test]
    fn anchoring_is_idempotent() {
        let mut u = unconstrained(vec![0.3, -0.2], 2);
        u.means = vec![vec![1.0, -2.0], vec![3.0, 4.0]];
        u.factors[0] = vec![vec![2.0, 0.1], vec![0.0, 0.5]];
        let a = u.anchor_first_component();
        assert_eq!(a.means[0], vec![0.0, 0.0]);
        assert_eq!(a.factors[0], identity_rows(2));
        assert_eq!(a.means[1], u.means[1]);
        assert_eq!(a.anchor_first_component(), a);
    }

    #[test]
    fn flat_round_trip_and_mask_layout() {
        let mut u = unconstrained(vec![0.1, 0.2], 2);
        u.means = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        u.factors[1] = vec![vec![5.0, 6.0], vec![7.0, 8.0]];
        let flat = u.to_flat();
        assert_eq!(flat.len(), u.len());
        assert_eq!(UnconstrainedParams::from_flat(&flat, 2, 2), u);
        let mask = trainable_mask(2, 2, true, false);
        assert_eq!(&mask[..2], &[true, true]);
        assert_eq!(&mask[2..4], &[false, false]);
        assert_eq!(&mask[6..10], &[false; 4]);
        assert!(mask[10..].iter().all(|&m| m));
        let diag = trainable_mask(1, 2, false, true);
        assert_eq!(diag, vec![true, true, true, true, false, false, true]);
    }

    #[test]
    fn standard_normal_mode() {
        let g = unconstrained(vec![0.0], 2).to_constrained().unwrap();
        let v = gmm_logpdf(&[0.0, 0.0], &g).unwrap();
        assert!((v - (-(2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((v + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn identical_components_collapse() {
        let one = GmcmParams::new(vec![1.0], vec![vec![0.3, -0.1]], vec![vec![vec![2.0, 0.5], vec![0.5, 1.0]]]).unwrap();
        let two = GmcmParams::new(
            vec![0.5, 0.5],
            vec![vec![0.3, -0.1]; 2],
            vec![vec![vec![2.0, 0.5], vec![0.5, 1.0]]; 2],
        )
        .unwrap();
        let x = [1.1, 0.4];
        assert!((gmm_logpdf(&x, &one).unwrap() - gmm_logpdf(&x, &two).unwrap()).abs() < 1e-12);
    }

    fn two_point_1d() -> GmcmParams {
        GmcmParams::new(
            vec![0.5, 0.5],
            vec![vec![-1.0], vec![1.0]],
            vec![vec![vec![1.0]], vec![vec![1.0]]],
        )
        .unwrap()
    }

    #[test]
    fn scalar_mixture_at_origin() {
        // both components contribute ½·φ(1), so the density is φ(1)
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((phi1 - 0.241_970_7).abs() < 1e-7);
        let g = two_point_1d();
        let v = gmm_logpdf(&[0.0], &g).unwrap();
        assert!((v - phi1.ln()).abs() < 1e-12);
        assert!((v + 1.41894).abs() < 1e-5);
        assert!((marginal_gmm_logpdf(0.0, 0, &g) - v).abs() < 1e-12);
    }

    #[test]
    fn marginal_standard_normal_and_symmetry() {
        let g = unconstrained(vec![0.0], 3).to_constrained().unwrap();
        assert!((marginal_gmm_logpdf(0.0, 1, &g) + 0.918_938_533).abs() < 1e-8);
        let s = two_point_1d();
        assert!((marginal_gmm_logpdf(0.7, 0, &s) - marginal_gmm_logpdf(-0.7, 0, &s)).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        assert!(GmcmParams::new(vec![0.6, 0.6], vec![vec![0.0]; 2], vec![vec![vec![1.0]]; 2]).is_err());
        assert_eq!(
            GmcmParams::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![vec![1.0, 2.0], vec![2.0, 1.0]]]),
            Err(GmcmError::NonPositiveDefinite { component: 0 })
        );
        assert!(DataMatrix::from_rows(&[vec![0.5, 1.0]], Role::Rank).is_err());
        assert!(DataMatrix::from_rows(&[vec![0.5], vec![0.2, 0.1]], Role::Raw).is_err());
        assert!(DataMatrix::from_rows(&[vec![f64::NAN]], Role::Raw).is_err());
    }

    /// Direct multivariate normal log-density via explicit inverse and
    /// determinant (Gauss-Jordan), independent of the Cholesky path.
    fn mvn_logpdf_oracle(x: &[f64], mu: &[f64], cov: &[f64]) -> f64 {
        let p = x.len();
        let mut a = cov.to_vec();
        let mut inv = linalg::identity(p);
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i * p + c].abs().total_cmp(&a[j * p + c].abs())).unwrap();
            for j in 0..p {
                a.swap(c * p + j, piv * p + j);
                inv.swap(c * p + j, piv * p + j);
            }
            let d = a[c * p + c];
            for j in 0..p {
                a[c * p + j] /= d;
                inv[c * p + j] /= d;
            }
            for r in 0..p {
                if r != c {
                    let f = a[r * p + c];
                    for j in 0..p {
                        a[r * p + j] -= f * a[c * p + j];
                        inv[r * p + j] -= f * inv[c * p + j];
                    }
                }
            }
        }
        let d: Vec<f64> = (0..p).map(|i| x[i] - mu[i]).collect();
        let mut q = 0.0;
        for i in 0..p {
            for j in 0..p {
                q += d[i] * inv[i * p + j] * d[j];
            }
        }
        -0.5 * (p as f64 * LN_2PI + linalg::determinant(cov, p).ln() + q)
    }

    proptest! {
        #[test]
        fn weights_always_on_simplex(alpha in prop::collection::vec(-700.0f64..700.0, 1..6)) {
            let g = unconstrained(alpha, 1).to_constrained().unwrap();
            let s: f64 = g.weights.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn gram_of_any_factor_is_psd(v in prop::collection::vec(-3.0f64..3.0, 9)) {
            let g = linalg::gram(&v, 3);
            prop_assert!(linalg::asymmetry(&g, 3) < 1e-12);
            // psd: xᵀ G x = |Vᵀx|² ≥ 0 for a few probe vectors
            for probe in [[1.0, 0.0, 0.0], [1.0, -1.0, 0.5], [0.2, 0.3, -2.0]] {
                let mut q = 0.0;
                for a in 0..3 { for b in 0..3 { q += probe[a] * g[a * 3 + b] * probe[b]; } }
                prop_assert!(q >= -1e-12);
            }
            if linalg::determinant(&v, 3).abs() > 1e-3 {
                prop_assert!(linalg::cholesky(&g, 3).is_some());
            }
        }

        #[test]
        fn single_component_matches_mvn_oracle(
            mu in prop::collection::vec(-3.0f64..3.0, 3),
            v in prop::collection::vec(-2.0f64..2.0, 9),
            x in prop::collection::vec(-4.0f64..4.0, 3),
        ) {
            let mut v = v;
            for a in 0..3 { v[a * 3 + a] += if v[a * 3 + a] >= 0.0 { 1.0 } else { -1.0 }; }
            prop_assume!(linalg::determinant(&v, 3).abs() > 0.05);
            let u = UnconstrainedParams {
                alpha: vec![0.0],
                means: vec![mu.clone()],
                factors: vec![v.chunks(3).map(<[f64]>::to_vec).collect()],
            };
            let g = u.to_constrained().unwrap();
            let cov = g.covariances[0].concat();
            let got = gmm_logpdf(&x, &g).unwrap();
            let want = mvn_logpdf_oracle(&x, &mu, &cov);
            prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        }

        #[test]
        fn marginal_equals_projected_mixture(
            w in 0.05f64..0.95,
            m in prop::collection::vec(-3.0f64..3.0, 4),
            y in -5.0f64..5.0,
        ) {
            let g = GmcmParams::new(
                vec![w, 1.0 - w],
                vec![vec![m[0], m[1]], vec![m[2], m[3]]],
                vec![
                    vec![vec![1.5, 0.3], vec![0.3, 0.7]],
                    vec![vec![0.4, -0.1], vec![-0.1, 2.0]],
                ],
            ).unwrap();
            for j in 0..2 {
                let proj = g.project(&[j]);
                let a = marginal_gmm_logpdf(y, j, &g);
                let b = gmm_logpdf(&[y], &proj).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
