//! Method-of-moments estimation of `r²` under random effects, where rows of
//! `B` are i.i.d. `N(0, Σ_b/p)` and the design may have correlated,
//! non-Gaussian rows.
//!
//! Conditional on `X`, `E[YᵀY/n] = Σ̄_e + ĝ₁Σ_b` and
//! `E[YᵀXXᵀY/n²] = (p/n)ĝ₁Σ̄_e + ĝ₂Σ_b`, so the estimates solve a 2×2 system
//! whose determinant is `ĝ₂ − (p/n)ĝ₁²`.
//!
//! Noise may be heteroskedastic (`e_i ~ N(0, Σ_i)`); the estimators then
//! target the average covariance `Σ̄_e`, and the variance of `σ̂²` picks up
//! an extra term proportional to the total heterogeneity `κ_tot`. Two
//! structured estimators of `κ_tot` are provided: scalar heterogeneity
//! (`Σ_i = ν_i Σ_e`) and caller-supplied subgroups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};
use crate::inference::{check_level, AsymptoticVariance, VarianceComponents};
use crate::matrix_stats::{cross_products, spectral_moments, CrossProducts, Matrix, SpectralMoments, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsEstimate {
    pub sigma_b_hat: SymMatrix,
    /// Estimate of `Σ_e`, or of the average `Σ̄_e` under heteroskedastic noise.
    pub sigma_e_hat: SymMatrix,
    pub moments: SpectralMoments,
    pub rho2: f64,
    pub sigma2: f64,
    pub r2: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

pub fn estimate_random(x: &Matrix, y: &Matrix) -> Result<RandomEffectsEstimate> {
    let cp = cross_products(x, y)?;
    let moments = spectral_moments(x);
    RandomEffectsEstimate::from_parts(&cp, moments)
}

impl RandomEffectsEstimate {
    pub fn from_parts(cp: &CrossProducts, moments: SpectralMoments) -> Result<Self> {
        if moments.is_singular() {
            return Err(SnrError::SingularMomentSystem { denom: moments.denom });
        }
        let (n, p) = (moments.n, moments.p);
        let (nf, pf) = (n as f64, p as f64);
        let inv = 1.0 / moments.denom;
        let n2 = nf * nf;
        let sb = SymMatrix::from_matrix(
            cp.yty.as_matrix() * (-pf * moments.g1 / n2 * inv) + cp.ytxxty.as_matrix() * (inv / n2),
        )?;
        let se = SymMatrix::from_matrix(
            cp.yty.as_matrix() * (moments.g2 / nf * inv) - cp.ytxxty.as_matrix() * (moments.g1 / n2 * inv),
        )?;
        let q = sb.dim();
        let rho2 = sb.trace() / q as f64;
        let sigma2 = se.trace() / q as f64;
        let total = rho2 + sigma2;
        if total == 0.0 {
            return Err(SnrError::DegenerateResponse);
        }
        Ok(RandomEffectsEstimate { sigma_b_hat: sb, sigma_e_hat: se, moments, rho2, sigma2, r2: rho2 / total, n, p, q })
    }

    /// Plug-in asymptotic variance with heterogeneity `kappa_tot` (0 for
    /// homoskedastic noise).
    pub fn asymptotic_variance(&self, kappa_tot: f64, level: f64) -> Result<AsymptoticVariance> {
        asymptotic_variance_random(
            &self.moments,
            &self.sigma_b_hat,
            &self.sigma_e_hat,
            self.q,
            kappa_tot,
            self.rho2,
            self.sigma2,
            self.r2,
            level,
        )
    }
}

fn check_dims(q: usize, a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if q == 0 {
        return Err(SnrError::InvalidParameter("q must be positive".into()));
    }
    for m in [a, b] {
        if m.dim() != q {
            return Err(SnrError::DimensionMismatch {
                context: "covariance plug-in must be q x q",
                expected: q,
                actual: m.dim(),
            });
        }
    }
    Ok(())
}

/// `V` for homogeneous noise.
pub fn homoskedastic_components(
    m: &SpectralMoments,
    sigma_b: &SymMatrix,
    sigma_e: &SymMatrix,
    q: usize,
) -> Result<VarianceComponents> {
    check_dims(q, sigma_b, sigma_e)?;
    if m.is_singular() {
        return Err(SnrError::SingularMomentSystem { denom: m.denom });
    }
    let (g1, g2, g3, g4, tau) = (m.g1, m.g2, m.g3, m.g4, m.aspect);
    let ee = sigma_e.frobenius_sq();
    let eb = sigma_e.trace_product(sigma_b);
    let bb = sigma_b.frobenius_sq();
    let qf = q as f64;
    let d = (g2 - tau * g1 * g1).powi(2) * qf * qf;

    let v11 = ((2.0 * g2 * g2 - 2.0 * tau * g1 * g1 * g2) * ee
        + (4.0 * g1 * g1 * g3 - 4.0 * g1 * g2 * g2) * eb
        + (2.0 / tau * g2 * g2 * g2 + 2.0 / tau * g1 * g1 * g4 - 4.0 / tau * g1 * g2 * g3) * bb)
        / d;
    let v22 = ((2.0 * tau * g2 - 2.0 * tau * tau * g1 * g1) * ee
        + (4.0 * tau * tau * g1 * g1 * g1 + 4.0 * g3 - 8.0 * tau * g1 * g2) * eb
        + (2.0 * tau * g1 * g1 * g2 + 2.0 / tau * g4 - 4.0 * g1 * g3) * bb)
        / d;
    let v12 = ((-2.0 * tau * g1 * g2 + 2.0 * tau * tau * g1 * g1 * g1) * ee
        + (-4.0 * g1 * g3 + 4.0 * g2 * g2) * eb
        + (-2.0 * g1 * g2 * g2 - 2.0 / tau * g1 * g4 + 2.0 / tau * g2 * g3 + 2.0 * g1 * g1 * g3) * bb)
        / d;
    Ok(VarianceComponents { v11, v12, v22 })
}

/// `V` for heteroskedastic noise with average covariance `sigma_e_bar` and
/// total heterogeneity `kappa_tot`. Only `V11` changes.
pub fn heteroskedastic_components(
    m: &SpectralMoments,
    sigma_b: &SymMatrix,
    sigma_e_bar: &SymMatrix,
    q: usize,
    kappa_tot: f64,
) -> Result<VarianceComponents> {
    if !(kappa_tot >= 0.0) {
        return Err(SnrError::InvalidParameter(format!("kappa_tot must be >= 0, got {kappa_tot}")));
    }
    let base = homoskedastic_components(m, sigma_b, sigma_e_bar, q)?;
    let (g1, g2, g3, g4, tau) = (m.g1, m.g2, m.g3, m.g4, m.aspect);
    let ee = sigma_e_bar.frobenius_sq();
    let eb = sigma_e_bar.trace_product(sigma_b);
    let bb = sigma_b.frobenius_sq();
    let qf = q as f64;
    let d = (g2 - tau * g1 * g1).powi(2) * qf * qf;
    let v11 = ((2.0 * g2 * g2 - 2.0 * tau * g1 * g1 * g2) * ee
        + (2.0 * g2 * g2 + 2.0 * tau * tau * g1 * g1 * g1 * g1 - 4.0 * tau * g1 * g1 * g2) * kappa_tot
        + (4.0 * g1 * g1 * g3 - 4.0 * g1 * g2 * g2) * eb
        + (2.0 / tau * g2 * g2 * g2 + 2.0 / tau * g1 * g1 * g4 - 4.0 / tau * g1 * g2 * g3) * bb)
        / d;
    Ok(VarianceComponents { v11, ..base })
}

#[allow(clippy::too_many_arguments)]
pub fn asymptotic_variance_random(
    moments: &SpectralMoments,
    sigma_b: &SymMatrix,
    sigma_e: &SymMatrix,
    q: usize,
    kappa_tot: f64,
    rho2: f64,
    sigma2: f64,
    r2: f64,
    level: f64,
) -> Result<AsymptoticVariance> {
    check_level(level)?;
    let v = heteroskedastic_components(moments, sigma_b, sigma_e, q, kappa_tot)?;
    AsymptoticVariance::from_components(v, moments.n, rho2, sigma2, r2, level)
}

/// Heteroskedasticity parameter `η = (1/n)Σ(ν_i − 1)²` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta_raw: f64,
    /// `max(eta_raw, 0)`
    pub eta: f64,
}

impl EtaEstimate {
    pub fn from_raw(eta_raw: f64) -> Self {
        EtaEstimate { eta_raw, eta: eta_raw.max(0.0) }
    }
}

fn squared_row_norms(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for col in m.column_iter() {
        for (acc, v) in out.iter_mut().zip(col.iter()) {
            *acc += v * v;
        }
    }
    out
}

/// Moment estimator of `η` under scalar heterogeneity `Σ_i = ν_i Σ_e`,
/// matching `(1/n)Σ(y_iᵀy_i)²` to its conditional expectation with
/// `tr(XXᵀV_n)` approximated by `tr(XXᵀ)`.
pub fn estimate_eta(x: &Matrix, y: &Matrix, est: &RandomEffectsEstimate) -> Result<EtaEstimate> {
    if x.nrows() != y.nrows() {
        return Err(SnrError::DimensionMismatch {
            context: "X and Y row counts",
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    let (n, p, q) = (x.nrows() as f64, x.ncols() as f64, y.ncols() as f64);
    let yy = squared_row_norms(y);
    let xx = squared_row_norms(x);
    let mean_yy2 = yy.iter().map(|v| v * v).sum::<f64>() / n;
    let sum_xx2: f64 = xx.iter().map(|v| v * v).sum();
    let tr_xx: f64 = xx.iter().sum();

    let se_f = est.sigma_e_hat.frobenius_sq();
    let denom = 2.0 * se_f + q * q * est.sigma2 * est.sigma2;
    if !(denom > 0.0) {
        return Err(SnrError::DegenerateResponse);
    }
    let rho4 = est.rho2 * est.rho2;
    let num = mean_yy2
        - 2.0 / (n * p * p) * sum_xx2 * est.sigma_b_hat.frobenius_sq()
        - 4.0 / (n * p) * tr_xx * est.sigma_b_hat.trace_product(&est.sigma_e_hat)
        - 1.0 / (n * p * p) * sum_xx2 * q * q * rho4
        - 2.0 / (n * p) * tr_xx * q * q * est.sigma2 * est.rho2;
    Ok(EtaEstimate::from_raw(num / denom - 1.0))
}

/// `κ_tot = η‖Σ_e‖_F²` under scalar heterogeneity; expects the clamped `η`.
pub fn kappa_scalar(eta: f64, sigma_e_hat: &SymMatrix) -> f64 {
    debug_assert!(eta >= 0.0, "kappa_scalar expects a clamped eta");
    eta * sigma_e_hat.frobenius_sq()
}

/// One subgroup's data.
#[derive(Debug, Clone)]
pub struct GroupData {
    pub x: Matrix,
    pub y: Matrix,
}

/// Splits `(X, Y)` into contiguous row blocks of the given sizes.
pub fn split_groups(x: &Matrix, y: &Matrix, sizes: &[usize]) -> Result<Vec<GroupData>> {
    let total: usize = sizes.iter().sum();
    if total != x.nrows() || x.nrows() != y.nrows() {
        return Err(SnrError::DimensionMismatch {
            context: "group sizes must sum to n",
            expected: x.nrows(),
            actual: total,
        });
    }
    if sizes.contains(&0) {
        return Err(SnrError::InvalidParameter("group sizes must be positive".into()));
    }
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let g = GroupData { x: x.rows(start, s).into_owned(), y: y.rows(start, s).into_owned() };
            start += s;
            g
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub size: usize,
    pub sigma_e_hat: SymMatrix,
    pub eta_hat_raw: f64,
    pub eta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroskedasticityEstimate {
    /// Scalar model: `η̂` itself. Subgroups: the size-weighted mean of the
    /// per-group raw estimates.
    pub eta_hat_raw: f64,
    pub eta_hat: f64,
    pub kappa_tot_hat: f64,
    pub per_group: Option<Vec<GroupEstimate>>,
}

impl HeteroskedasticityEstimate {
    pub fn scalar(eta: EtaEstimate, sigma_e_hat: &SymMatrix) -> Self {
        HeteroskedasticityEstimate {
            eta_hat_raw: eta.eta_raw,
            eta_hat: eta.eta,
            kappa_tot_hat: kappa_scalar(eta.eta, sigma_e_hat),
            per_group: None,
        }
    }
}

/// `κ̂_tot` under the subgroup model: between-group spread of the per-group
/// noise covariance estimates plus each group's own scalar heterogeneity.
/// Each group is estimated from its own rows only.
pub fn kappa_subgroup(groups: &[GroupData]) -> Result<HeteroskedasticityEstimate> {
    if groups.is_empty() {
        return Err(SnrError::EmptyInput("kappa_subgroup needs at least one group"));
    }
    let per: Vec<GroupEstimate> = groups
        .par_iter()
        .enumerate()
        .map(|(m, g)| {
            let wrap = |e: SnrError| SnrError::Group { group: m, source: Box::new(e) };
            let est = estimate_random(&g.x, &g.y).map_err(wrap)?;
            let eta = estimate_eta(&g.x, &g.y, &est).map_err(wrap)?;
            Ok(GroupEstimate {
                size: g.x.nrows(),
                sigma_e_hat: est.sigma_e_hat,
                eta_hat_raw: eta.eta_raw,
                eta_hat: eta.eta,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n: usize = per.iter().map(|g| g.size).sum();
    let q = per[0].sigma_e_hat.dim();
    let weights: Vec<f64> = per.iter().map(|g| g.size as f64 / n as f64).collect();
    let mut bar = SymMatrix::zeros(q);
    for (g, &r) in per.iter().zip(&weights) {
        bar = &bar + &g.sigma_e_hat.scale(r);
    }
    let mut kappa = 0.0;
    let mut eta_raw = 0.0;
    for (g, &r) in per.iter().zip(&weights) {
        kappa += r * (&g.sigma_e_hat - &bar).frobenius_sq();
        kappa += r * g.eta_hat * g.sigma_e_hat.frobenius_sq();
        eta_raw += r * g.eta_hat_raw;
    }
    Ok(HeteroskedasticityEstimate {
        eta_hat_raw: eta_raw,
        eta_hat: eta_raw.max(0.0),
        kappa_tot_hat: kappa,
        per_group: Some(per),
    })
}
