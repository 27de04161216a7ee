//! Gaussian mixture copula models fitted by automatic differentiation.
//!
//! Data are reduced to scaled ranks, mapped to latent observations through
//! the inverse marginal mixture CDFs, and the exact copula log-likelihood is
//! maximized with Adam using gradients from a small reverse-mode tape. A
//! Pseudo-EM baseline, clustering and reproducibility analysis, and seeded
//! simulators sit on top of the same machinery.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod marginal;
pub mod model;
pub mod optimizer;
pub mod pem;
pub mod simulate;

pub use analysis::{
    adjusted_idr, adjusted_rand_index, expand_repro, fit_pem_repro, fit_repro, idr, map_labels, ReproConfig,
    ReproParams, ReproResult,
};
pub use error::{GmcmError, Result};
pub use likelihood::{exact_loglik, pseudo_loglik, rho_penalty, LikelihoodBreakdown};
pub use marginal::{reset_latent, scaled_ranks, CdfMethod, InverseMethod, ResetConfig};
pub use model::{DataMatrix, GmcmParams, Role, UnconstrainedParams};
pub use optimizer::{fit_ad_gmcm, grad_exact_loglik, init_params, FitConfig, FitReport, InitStrategy, TraceEntry};
pub use pem::fit_pem;
pub use simulate::{simulate, LabeledDataset, MarginalSpec, SimSpec};
