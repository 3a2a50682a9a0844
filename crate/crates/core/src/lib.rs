//! Method-of-moments estimation of the signal-to-noise ratio
//! `r² = ρ²/(ρ²+σ²)` in high-dimensional multivariate linear models.
//!
//! [`estimate_fixed`] treats the coefficient matrix as deterministic and
//! [`estimate_random`] treats its rows as i.i.d. Gaussian. Both come with
//! plug-in asymptotic standard errors; the random-effects variance can be
//! corrected for heteroskedastic noise via [`kappa_scalar`] or
//! [`kappa_subgroup`].

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixed_effects;
pub mod generators;
pub mod inference;
pub mod io;
pub mod matrix_stats;
pub mod montecarlo;
pub mod oracle;
pub mod random_effects;
pub mod rng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Result, SnrError};
pub use fixed_effects::{estimate_fixed, exact_covariance_fixed, fixed_variance_components, FixedEffectsEstimate};
pub use generators::{simulate_dataset, Dataset, GroundTruth, NoiseModel, NoiseSpec, Simulator};
pub use inference::{clamp_unit, AsymptoticVariance, VarianceComponents};
pub use io::{parse_scenario, read_matrix, run_estimate, write_matrix, EstimateOptions, RunResult};
pub use matrix_stats::{cross_products, spectral_moments, sym_factor, Matrix, SpectralMoments, SymMatrix};
pub use montecarlo::{
    run_scenario, summarize, CoeffKind, DesignCov, DesignKind, HeteroCorrection, McSummary, ModelKind, RepRecord,
    ScenarioConfig, ScenarioReport,
};
pub use oracle::{conditional_moment_oracle, variance_formula_oracle, wishart_moment_oracle, OracleReport};
pub use random_effects::{
    estimate_eta, estimate_random, heteroskedastic_components, homoskedastic_components, kappa_scalar, kappa_subgroup,
    RandomEffectsEstimate,
};
