//! Rank transform, univariate mixture CDFs and their numerical inverse.
//!
//! The latent observations `y = Ψ⁻¹(u)` have no closed form; they are
//! recovered by tabulating the marginal mixture CDF on a grid and inverting
//! it by piecewise-linear interpolation in `(u, y)`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{GmcmError, Result};
use crate::model::{DataMatrix, GmcmParams, Role};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// How the normal CDF inside the mixture CDF is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CdfMethod {
    /// Full double precision via `erfc`.
    #[default]
    Exact,
    /// Three-term Abramowitz–Stegun 7.1.26 approximation (max error ≈ 2.5e-5),
    /// for parity experiments against software that uses it.
    AbramowitzStegun,
}

/// How latent values are recovered from ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InverseMethod {
    #[default]
    Grid,
    /// Bisection on the exact mixture CDF; slow, used as a reference.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetConfig {
    pub method: InverseMethod,
    pub points_per_component: usize,
    pub cdf: CdfMethod,
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self {
            method: InverseMethod::Grid,
            points_per_component: 1000,
            cdf: CdfMethod::Exact,
        }
    }
}

/// Tabulated marginal CDF for one latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseCdfGrid {
    abscissae: Vec<f64>,
    ordinates: Vec<f64>,
    points_per_component: usize,
    cdf_evaluations: usize,
}

impl InverseCdfGrid {
    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn ordinates(&self) -> &[f64] {
        &self.ordinates
    }

    pub fn points_per_component(&self) -> usize {
        self.points_per_component
    }

    /// Mixture-CDF evaluations spent building the grid.
    pub fn cdf_evaluations(&self) -> usize {
        self.cdf_evaluations
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    /// Interpolated inverse; the flag is set when `u` fell outside the
    /// tabulated range and the result was clamped to an endpoint.
    pub fn invert(&self, u: f64) -> Result<(f64, bool)> {
        let n = self.ordinates.len();
        if n == 0 {
            return Err(GmcmError::EmptyGrid);
        }
        let i = self.ordinates.partition_point(|&o| o < u);
        if i == 0 {
            return Ok((self.abscissae[0], u < self.ordinates[0]));
        }
        if i == n {
            return Ok((self.abscissae[n - 1], true));
        }
        let (u0, u1) = (self.ordinates[i - 1], self.ordinates[i]);
        let (y0, y1) = (self.abscissae[i - 1], self.abscissae[i]);
        let t = (u - u0) / (u1 - u0);
        Ok((y0 + t * (y1 - y0), false))
    }
}

/// Column-wise average ranks divided by `n + 1`.
pub fn scaled_ranks(data: &DataMatrix) -> Result<DataMatrix> {
    let (n, p) = (data.nrows(), data.ncols());
    if n < 2 {
        return Err(GmcmError::InvalidData(
            "need at least two observations to rank".into(),
        ));
    }
    let mut out = vec![0.0; n * p];
    let denom = (n + 1) as f64;
    for j in 0..p {
        let col = data.column(j);
        let ranks = average_ranks(&col);
        if ranks.iter().all(|&r| r == ranks[0]) {
            return Err(GmcmError::DegenerateColumn { column: j });
        }
        for (i, r) in ranks.into_iter().enumerate() {
            out[i * p + j] = r / denom;
        }
    }
    DataMatrix::from_vec(n, p, out, Role::Rank)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = avg;
        }
        start = end + 1;
    }
    ranks
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn erf_abramowitz_stegun(x: f64) -> f64 {
    const P: f64 = 0.470_47;
    const A1: f64 = 0.348_024_2;
    const A2: f64 = -0.095_879_8;
    const A3: f64 = 0.747_855_6;
    let ax = x.abs();
    let t = 1.0 / (1.0 + P * ax);
    let y = 1.0 - (A1 * t + A2 * t * t + A3 * t * t * t) * (-ax * ax).exp();
    y.copysign(x)
}

fn normal_cdf_with(z: f64, method: CdfMethod) -> f64 {
    match method {
        CdfMethod::Exact => normal_cdf(z),
        CdfMethod::AbramowitzStegun => 0.5 * (1.0 + erf_abramowitz_stegun(z / SQRT_2)),
    }
}

/// `Ψ_j(y) = Σ_k π_k Φ((y − μ_kj)/√Σ_kjj)`.
pub fn marginal_cdf(y: f64, j: usize, params: &GmcmParams) -> f64 {
    marginal_cdf_with(y, j, params, CdfMethod::Exact)
}

pub fn marginal_cdf_with(y: f64, j: usize, params: &GmcmParams, method: CdfMethod) -> f64 {
    params
        .weights
        .iter()
        .zip(&params.means)
        .zip(&params.covariances)
        .map(|((w, m), s)| w * normal_cdf_with((y - m[j]) / s[j][j].sqrt(), method))
        .sum()
}

/// Grid over the union of `μ_kj ± 5√Σ_kjj`, `points_per_component` points each.
pub fn build_inverse_grid(j: usize, params: &GmcmParams, points_per_component: usize) -> InverseCdfGrid {
    build_inverse_grid_covering(j, params, points_per_component, CdfMethod::Exact, None)
}

/// Like [`build_inverse_grid`], extending the endpoints outward (at most 64
/// steps of the widest component s.d.) until the ordinates cover
/// `[min(lo, 1/G), max(hi, 1 − 1/G)]` for grid size `G`.
pub fn build_inverse_grid_covering(
    j: usize,
    params: &GmcmParams,
    points_per_component: usize,
    cdf: CdfMethod,
    query_range: Option<(f64, f64)>,
) -> InverseCdfGrid {
    let ppc = points_per_component.max(2);
    let mut xs = Vec::with_capacity(params.k() * ppc);
    let mut widest: f64 = 0.0;
    for (m, s) in params.means.iter().zip(&params.covariances) {
        let sd = s[j][j].sqrt();
        widest = widest.max(sd);
        let (lo, hi) = (m[j] - 5.0 * sd, m[j] + 5.0 * sd);
        let step = (hi - lo) / (ppc - 1) as f64;
        xs.extend((0..ppc).map(|i| lo + step * i as f64));
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));

    let mut evaluations = 0;
    let mut eval = |y: f64| {
        evaluations += 1;
        marginal_cdf_with(y, j, params, cdf)
    };
    let mut pts: Vec<(f64, f64)> = xs.iter().map(|&y| (y, eval(y))).collect();

    let g = pts.len() as f64;
    let (want_lo, want_hi) = match query_range {
        Some((lo, hi)) => (lo.min(1.0 / g), hi.max(1.0 - 1.0 / g)),
        None => (1.0 / g, 1.0 - 1.0 / g),
    };
    for _ in 0..64 {
        if pts[0].1 <= want_lo {
            break;
        }
        let y = pts[0].0 - widest;
        pts.insert(0, (y, eval(y)));
    }
    for _ in 0..64 {
        if pts[pts.len() - 1].1 >= want_hi {
            break;
        }
        let y = pts[pts.len() - 1].0 + widest;
        pts.push((y, eval(y)));
    }

    // keep strictly increasing ordinates; flat tails carry no information
    let mut abscissae = Vec::with_capacity(pts.len());
    let mut ordinates: Vec<f64> = Vec::with_capacity(pts.len());
    for (y, u) in pts {
        if ordinates.last().is_none_or(|&last| u > last) {
            abscissae.push(y);
            ordinates.push(u);
        }
    }
    InverseCdfGrid {
        abscissae,
        ordinates,
        points_per_component: ppc,
        cdf_evaluations: evaluations,
    }
}

/// Interpolated `Ψ⁻¹(u)`, clamped to the grid ends outside its range.
pub fn inverse_cdf(u: f64, grid: &InverseCdfGrid) -> Result<f64> {
    grid.invert(u).map(|(y, _)| y)
}

/// Reference inverse of the exact mixture CDF by bisection.
pub fn exact_inverse_cdf(u: f64, j: usize, params: &GmcmParams) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, s) in params.means.iter().zip(&params.covariances) {
        let sd = s[j][j].sqrt();
        lo = lo.min(m[j] - 40.0 * sd);
        hi = hi.max(m[j] + 40.0 * sd);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if marginal_cdf(mid, j, params) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Latent matrix plus the number of clamped lookups.
#[derive(Debug, Clone)]
pub struct LatentReset {
    pub latent: DataMatrix,
    pub clamped: usize,
}

/// `y_ij = Ψ_j⁻¹(u_ij)` under `params`, with the default grid settings.
pub fn reset_latent(ranks: &DataMatrix, params: &GmcmParams) -> Result<DataMatrix> {
    reset_latent_with(ranks, params, &ResetConfig::default()).map(|r| r.latent)
}

pub fn reset_latent_with(
    ranks: &DataMatrix,
    params: &GmcmParams,
    config: &ResetConfig,
) -> Result<LatentReset> {
    if ranks.role() != Role::Rank {
        return Err(GmcmError::InvalidData(
            "latent reset expects a rank matrix".into(),
        ));
    }
    let (n, p) = (ranks.nrows(), ranks.ncols());
    if p != params.p() {
        return Err(GmcmError::InvalidData(format!(
            "ranks have {p} columns, model has {}",
            params.p()
        )));
    }
    let mut out = vec![0.0; n * p];
    let mut clamped = 0;
    for j in 0..p {
        let col = ranks.column(j);
        match config.method {
            InverseMethod::Grid => {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let grid = build_inverse_grid_covering(
                    j,
                    params,
                    config.points_per_component,
                    config.cdf,
                    Some((lo, hi)),
                );
                for (i, &u) in col.iter().enumerate() {
                    let (y, c) = grid.invert(u)?;
                    clamped += usize::from(c);
                    out[i * p + j] = y;
                }
            }
            InverseMethod::Exact => {
                for (i, &u) in col.iter().enumerate() {
                    out[i * p + j] = exact_inverse_cdf(u, j, params);
                }
            }
        }
    }
    Ok(LatentReset {
        latent: DataMatrix::from_vec(n, p, out, Role::Latent)?,
        clamped,
    })
}
