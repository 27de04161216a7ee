//! Gradient ascent on the exact copula log-likelihood.
//!
//! Each iteration resets the latent observations from the current
//! parameters, differentiates the exact log-likelihood with the latent
//! values held fixed, and takes an Adam step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::autodiff::{Scalar, Tape};
use crate::error::{GmcmError, Result};
use crate::likelihood::{check_latent, loglik_parts, LikelihoodBreakdown};
use crate::marginal::{reset_latent_with, ResetConfig};
use crate::model::{
    trainable_mask, DataMatrix, GmcmParams, LatentMixture, Prepared, Role, UnconstrainedParams,
};

/// A drop in exact log-likelihood larger than this counts as a violation.
pub const MONOTONE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_iterations: usize,
    pub convergence_gamma: f64,
    pub grad_steps_per_reset: usize,
    /// Pin component 0 to zero mean and identity covariance.
    pub anchor: bool,
    /// Keep every covariance diagonal.
    pub diagonal: bool,
    pub seed: u64,
    pub reset: ResetConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_iterations: 750,
            convergence_gamma: 1e-6,
            grad_steps_per_reset: 1,
            anchor: false,
            diagonal: false,
            seed: 0,
            reset: ResetConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GmcmError::InvalidParams(msg.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(b > 0.0 && b < 1.0) {
                return bad("Adam betas must lie in (0, 1)");
            }
        }
        if !(self.adam_epsilon > 0.0) || !(self.convergence_gamma > 0.0) {
            return bad("epsilon and gamma must be positive");
        }
        if self.max_iterations == 0 || self.grad_steps_per_reset == 0 {
            return bad("iteration counts must be at least 1");
        }
        if self.reset.points_per_component < 2 {
            return bad("grid needs at least two points per component");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitStrategy {
    Random,
    KMeans,
    Given(UnconstrainedParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub exact_ll: f64,
    pub pseudo_ll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MonotonicityViolations {
    pub count: usize,
    pub worst_drop: f64,
}

/// Elementwise violation counts for the three latent-reset conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResetConditionCounts {
    pub distance_to_means: usize,
    pub upward_move: usize,
    pub downward_move: usize,
}

impl ResetConditionCounts {
    pub fn total(&self) -> usize {
        self.distance_to_means + self.upward_move + self.downward_move
    }

    fn add(&mut self, other: &Self) {
        self.distance_to_means += other.distance_to_means;
        self.upward_move += other.upward_move;
        self.downward_move += other.downward_move;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub trace: Vec<TraceEntry>,
    pub final_params: GmcmParams,
    pub final_latent: DataMatrix,
    pub converged: bool,
    pub iterations_used: usize,
    pub monotonicity_violations: MonotonicityViolations,
    pub clamp_warnings: usize,
    pub reset_conditions: ResetConditionCounts,
}

impl FitReport {
    pub fn final_exact_ll(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.exact_ll)
    }

    pub fn final_pseudo_ll(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.pseudo_ll)
    }
}

/// A differentiable objective over a flat parameter vector.
pub(crate) trait Objective {
    /// Constrained parameters used for the latent reset.
    fn params(&self, x: &[f64]) -> Result<GmcmParams>;

    /// `(pseudo, marginal, penalty)`; the ascent target is
    /// `pseudo − marginal − penalty`.
    fn parts<T: Scalar>(&self, x: &[T], latent: &DataMatrix) -> Result<(T, T, T)>;

    /// Optional projection applied after every step.
    fn project(&self, _x: &mut [f64]) {}
}

pub(crate) struct GmcmObjective {
    pub k: usize,
    pub p: usize,
}

impl Objective for GmcmObjective {
    fn params(&self, x: &[f64]) -> Result<GmcmParams> {
        UnconstrainedParams::from_flat(x, self.k, self.p).to_constrained()
    }

    fn parts<T: Scalar>(&self, x: &[T], latent: &DataMatrix) -> Result<(T, T, T)> {
        let (k, p) = (self.k, self.p);
        let mix = LatentMixture::from_unconstrained(
            &x[..k],
            &x[k..k + k * p],
            &x[k + k * p..],
            k,
            p,
        );
        let prep = Prepared::new(&mix)?;
        let (pseudo, marginal) = loglik_parts(latent, &prep);
        let zero = pseudo.lift(0.0);
        Ok((pseudo, marginal, zero))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Evaluation {
    pub breakdown: LikelihoodBreakdown,
}

pub(crate) fn value_and_grad<O: Objective>(
    obj: &O,
    x: &[f64],
    latent: &DataMatrix,
) -> Result<(Evaluation, Vec<f64>)> {
    let tape = Tape::new();
    let vars = tape.vars(x);
    let (pseudo, marginal, penalty) = obj.parts(&vars, latent)?;
    let target = pseudo - marginal - penalty;
    let grad = tape.gradient(target).wrt_all(&vars);
    if grad.iter().any(|g| !g.is_finite()) || !target.value().is_finite() {
        return Err(GmcmError::NonFiniteGradient);
    }
    let eval = Evaluation {
        breakdown: LikelihoodBreakdown {
            exact_ll: pseudo.value() - marginal.value(),
            pseudo_ll: pseudo.value(),
            marginal_ll: marginal.value(),
        },
    };
    Ok((eval, grad))
}

/// Exact log-likelihood evaluated directly on unconstrained parameters.
pub fn exact_loglik_unconstrained(
    u: &UnconstrainedParams,
    latent: &DataMatrix,
) -> Result<LikelihoodBreakdown> {
    check_latent(latent, u.p())?;
    let obj = GmcmObjective { k: u.k(), p: u.p() };
    let (pseudo, marginal, _) = obj.parts(&u.to_flat(), latent)?;
    Ok(LikelihoodBreakdown {
        exact_ll: pseudo - marginal,
        pseudo_ll: pseudo,
        marginal_ll: marginal,
    })
}

/// Exact log-likelihood and its gradient in the flat `[alpha | means | factors]` layout.
pub fn exact_loglik_with_gradient(
    u: &UnconstrainedParams,
    latent: &DataMatrix,
) -> Result<(LikelihoodBreakdown, Vec<f64>)> {
    check_latent(latent, u.p())?;
    let obj = GmcmObjective { k: u.k(), p: u.p() };
    let (eval, grad) = value_and_grad(&obj, &u.to_flat(), latent)?;
    Ok((eval.breakdown, grad))
}

pub fn grad_exact_loglik(u: &UnconstrainedParams, latent: &DataMatrix) -> Result<Vec<f64>> {
    exact_loglik_with_gradient(u, latent).map(|(_, g)| g)
}

/// Zero the gradient of frozen entries.
pub fn apply_mask(grad: &mut [f64], mask: &[bool]) {
    for (g, &m) in grad.iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step in the ascent direction.
pub fn adam_step(x: &mut [f64], grad: &[f64], state: &mut AdamState, config: &FitConfig) {
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..x.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        x[i] += config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
}

/// Lemma-style diagnostics for one latent reset.
///
/// The first condition asks every coordinate to move away from every
/// component mean. The other two ask an upward move to stay at or below
/// the reflection of the old value through the mean centroid, and a
/// downward move to stay above it. Both are evaluated as
/// `(y_new − y_old)(K(y_new + y_old) − 2Σ_k μ_k) ≤ 0`, so an unmoved
/// coordinate satisfies them on the boundary.
pub fn monotonicity_check(
    y_old: &DataMatrix,
    y_new: &DataMatrix,
    params_new: &GmcmParams,
) -> Result<ResetConditionCounts> {
    if y_old.nrows() != y_new.nrows() || y_old.ncols() != y_new.ncols() {
        return Err(GmcmError::LengthMismatch {
            left: y_old.values().len(),
            right: y_new.values().len(),
        });
    }
    let k = params_new.k() as f64;
    let mut counts = ResetConditionCounts::default();
    for j in 0..y_new.ncols() {
        let mean_sum: f64 = params_new.means.iter().map(|m| m[j]).sum();
        for i in 0..y_new.nrows() {
            let (old, new) = (y_old.get(i, j), y_new.get(i, j));
            for m in &params_new.means {
                if (new - m[j]).abs() < (old - m[j]).abs() {
                    counts.distance_to_means += 1;
                }
            }
            let diff = new - old;
            if diff * (k * (new + old) - 2.0 * mean_sum) > 0.0 {
                if diff > 0.0 {
                    counts.upward_move += 1;
                } else {
                    counts.downward_move += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Seeded Lloyd's algorithm with k-means++ seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

pub fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, iterations: usize, rng: &mut R) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(GmcmError::InitFailure(format!("cannot form {k} clusters from {n} points")));
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, x) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(x, &centers[centers.len() - 1]));
        }
    }

    let p = points[0].len();
    let mut labels = vec![0; n];
    let mut sizes = vec![0; k];
    for _ in 0..iterations.max(1) {
        for (i, x) in points.iter().enumerate() {
            labels[i] = (0..k)
                .min_by(|&a, &b| dist2(x, &centers[a]).total_cmp(&dist2(x, &centers[b])))
                .unwrap_or(0);
        }
        let mut sums = vec![vec![0.0; p]; k];
        sizes = vec![0; k];
        for (x, &l) in points.iter().zip(&labels) {
            sizes[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(GmcmError::InitFailure(format!("cluster {c} is empty")));
        }
        let mut moved = false;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            moved |= new != centers[c];
            centers[c] = new;
        }
        if !moved {
            break;
        }
    }
    Ok(KMeans { centers, labels, sizes })
}

const KMEANS_ITERATIONS: usize = 25;
const KMEANS_ATTEMPTS: u64 = 5;

/// Starting point θ⁰ for either fitting algorithm.
pub fn init_params(ranks: &DataMatrix, k: usize, strategy: &InitStrategy, seed: u64) -> Result<UnconstrainedParams> {
    let (n, p) = (ranks.nrows(), ranks.ncols());
    if k == 0 || k > n {
        return Err(GmcmError::InitFailure(format!("need 1 <= K <= n, got K = {k}, n = {n}")));
    }
    match strategy {
        InitStrategy::Given(u) => {
            if u.k() != k || u.p() != p {
                return Err(GmcmError::InitFailure(format!(
                    "given start has K = {}, p = {}; expected K = {k}, p = {p}",
                    u.k(),
                    u.p()
                )));
            }
            Ok(u.clone())
        }
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let means = (0..k)
                .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            Ok(UnconstrainedParams::with_means(means))
        }
        InitStrategy::KMeans => {
            let normal = Normal::standard();
            let points: Vec<Vec<f64>> = ranks
                .rows()
                .map(|r| r.iter().map(|&u| normal.inverse_cdf(u)).collect())
                .collect();
            let mut last = None;
            for attempt in 0..KMEANS_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
                match kmeans(&points, k, KMEANS_ITERATIONS, &mut rng) {
                    Ok(km) => {
                        let mut u = UnconstrainedParams::with_means(km.centers);
                        u.alpha = km.sizes.iter().map(|&s| (s as f64 / n as f64).ln()).collect();
                        return Ok(u);
                    }
                    Err(e) => last = Some(e),
                }
            }
            Err(last.unwrap_or_else(|| GmcmError::InitFailure("k-means failed".into())))
        }
    }
}

/// Alternate latent reset and Adam steps until the traced log-likelihood
/// changes by less than γ. Returns the report and the final flat point.
pub(crate) fn run_ascent<O: Objective>(
    obj: &O,
    ranks: &DataMatrix,
    x0: Vec<f64>,
    mask: &[bool],
    config: &FitConfig,
) -> Result<(FitReport, Vec<f64>)> {
    config.validate()?;
    if ranks.role() != Role::Rank {
        return Err(GmcmError::InvalidData("fitting expects a rank matrix".into()));
    }
    let mut x = x0;
    let mut adam = AdamState::new(x.len());
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut violations = MonotonicityViolations::default();
    let mut conditions = ResetConditionCounts::default();
    let mut clamp_warnings = 0;
    let mut converged = false;
    let mut previous: Option<DataMatrix> = None;
    let mut last: Option<(GmcmParams, DataMatrix)> = None;

    for t in 0..config.max_iterations {
        let params = obj.params(&x).map_err(|e| e.at(t))?;
        let reset = reset_latent_with(ranks, &params, &config.reset).map_err(|e| e.at(t))?;
        clamp_warnings += reset.clamped;
        if let Some(old) = &previous {
            conditions.add(&monotonicity_check(old, &reset.latent, &params)?);
        }
        let latent = reset.latent;

        for step in 0..config.grad_steps_per_reset {
            let (eval, mut grad) = value_and_grad(obj, &x, &latent).map_err(|e| e.at(t))?;
            if step == 0 {
                let entry = TraceEntry {
                    exact_ll: eval.breakdown.exact_ll,
                    pseudo_ll: eval.breakdown.pseudo_ll,
                };
                if let Some(prev) = trace.last() {
                    let drop = prev.exact_ll - entry.exact_ll;
                    if drop > MONOTONE_TOLERANCE {
                        violations.count += 1;
                        violations.worst_drop = violations.worst_drop.max(drop);
                    }
                    if (entry.exact_ll - prev.exact_ll).abs() < config.convergence_gamma {
                        converged = true;
                    }
                }
                trace.push(entry);
                if converged || t + 1 == config.max_iterations {
                    break;
                }
            }
            apply_mask(&mut grad, mask);
            adam_step(&mut x, &grad, &mut adam, config);
            obj.project(&mut x);
        }

        previous = Some(latent.clone());
        last = Some((params, latent));
        if converged {
            break;
        }
    }

    let (final_params, final_latent) = last.expect("at least one iteration runs");
    let report = FitReport {
        iterations_used: trace.len(),
        trace,
        final_params,
        final_latent,
        converged,
        monotonicity_violations: violations,
        clamp_warnings,
        reset_conditions: conditions,
    };
    Ok((report, x))
}

/// AD-GMCM: Adam ascent on the exact copula log-likelihood.
pub fn fit_ad_gmcm(ranks: &DataMatrix, k: usize, init: &InitStrategy, config: &FitConfig) -> Result<FitReport> {
    fit_ad_gmcm_full(ranks, k, init, config).map(|(r, _)| r)
}

/// Like [`fit_ad_gmcm`], also returning the final unconstrained point.
pub fn fit_ad_gmcm_full(
    ranks: &DataMatrix,
    k: usize,
    init: &InitStrategy,
    config: &FitConfig,
) -> Result<(FitReport, UnconstrainedParams)> {
    config.validate()?;
    let p = ranks.ncols();
    let mut u0 = init_params(ranks, k, init, config.seed)?;
    if config.anchor {
        u0 = u0.anchor_first_component();
    }
    if config.diagonal {
        for f in &mut u0.factors {
            for (a, row) in f.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate() {
                    if a != b {
                        *v = 0.0;
                    }
                }
            }
        }
    }
    let mask = trainable_mask(k, p, config.anchor, config.diagonal);
    let (report, x) = run_ascent(&GmcmObjective { k, p }, ranks, u0.to_flat(), &mask, config)?;
    Ok((report, UnconstrainedParams::from_flat(&x, k, p)))
}
